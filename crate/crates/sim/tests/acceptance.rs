//! End-to-end acceptance suite. Every criterion prints one line and the
//! test fails if any of them does.
//!
//! Run with `cargo test -p probfed-sim --test acceptance -- --nocapture`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::{config, DISJOINT_EXPERTS};
use probfed_core::rng::{seeded, uniform_simplex, SimRng};
use probfed_core::{
    argmax_class, validate_simplex, ConfusionMatrix, CoreError, LabeledSample, ProbabilityVector,
    SoftmaxLinearModel,
};
use probfed_ensemble::{
    client_distill_update, ga_optimize, kd_objective, kl_divergence, mean_fuse, predict_stacking, pso_optimize,
    repair, simplex_grid, train_stacking, weighted_fuse, AlignedProbabilities, DistillationConfig, FitnessContext,
    GaConfig, PsoConfig, ReferenceSet, StackingConfig, TracePoint, DEFAULT_EPSILON,
};
use probfed_sim::{build_fleet, parse_scenario, replay_check, run, run_to_dir, scenarios, World};
use probfed_transport::{
    parameter_message_len, probability_message_len, topics, Accounting, Broker, ContributionMessage,
    EnsembleBroadcast, InProcBroker, Message, MessageKind, ParameterMessage, ProbabilityEntry,
};
use rand::Rng;

const TOL: f64 = 1e-6;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn criterion(n: u32, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (ok, detail) = match result {
        Ok(Ok(d)) if elapsed <= budget => (true, d),
        Ok(Ok(d)) => (false, format!("{d}; took {elapsed:.2?}, budget {budget:?}")),
        Ok(Err(e)) => (false, e),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            (false, format!("panicked: {msg}"))
        }
    };
    println!(
        "criterion {n:>2}: {} {name} ({elapsed:.2?}) {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn random_aligned(rng: &mut SimRng, labelled: bool) -> AlignedProbabilities {
    // Weight search needs two models; fusion is fine with one.
    let m = rng.random_range(if labelled { 2 } else { 1 }..=4);
    let c = rng.random_range(2..=6);
    let n = rng.random_range(2..=8);
    let rows = (0..n)
        .map(|_| {
            (0..m)
                .map(|_| ProbabilityVector::new(uniform_simplex(rng, c)).unwrap())
                .collect()
        })
        .collect();
    let a = AlignedProbabilities::new((1..=m as u32).collect(), c, (0..n as u64).collect(), rows).unwrap();
    if !labelled {
        return a;
    }
    // Two distinct labels at least, so stacking has something to separate.
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    labels[0] = 0;
    labels[1] = 1;
    a.with_labels(labels).unwrap()
}

fn all_simplex(ps: &[ProbabilityVector]) -> bool {
    ps.iter().all(|p| validate_simplex(p.as_slice(), TOL))
}

fn random_model(rng: &mut SimRng, c: usize, d: usize) -> SoftmaxLinearModel {
    let w = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let b = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
    SoftmaxLinearModel::from_parts(c, d, w, b).unwrap()
}

fn random_reference(rng: &mut SimRng, d: usize, n: usize) -> ReferenceSet {
    let samples: Vec<LabeledSample> = (0..n)
        .map(|i| LabeledSample {
            sample_id: i as u64,
            features: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            label: 0,
        })
        .collect();
    ReferenceSet::from_samples(0, &samples).unwrap()
}

fn simplex_suite() -> Outcome {
    let mut rng = seeded(1001);
    let mut counts = [0usize; 6];
    for i in 0..10_000u64 {
        let op = (i % 6) as usize;
        counts[op] += 1;
        match op {
            0 => {
                let a = random_aligned(&mut rng, false);
                ensure!(all_simplex(&mean_fuse(&a).unwrap()), "mean fusion left the simplex at op {i}");
            }
            1 => {
                let a = random_aligned(&mut rng, false);
                let raw: Vec<f64> = (0..a.n_models()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let w = repair(&raw);
                ensure!(validate_simplex(w.as_slice(), TOL), "repair left the simplex at op {i}");
                ensure!(all_simplex(&weighted_fuse(&a, &w).unwrap()), "weighted fusion left the simplex at op {i}");
            }
            2 => {
                let a = random_aligned(&mut rng, true);
                let cfg = StackingConfig { max_iter: 20, ..Default::default() };
                let fit = train_stacking(&a, &cfg).unwrap();
                ensure!(all_simplex(&predict_stacking(&fit.model, &a).unwrap()), "stacking left the simplex at op {i}");
            }
            3 => {
                let ctx = FitnessContext::new(random_aligned(&mut rng, true)).unwrap();
                let cfg = GaConfig {
                    population_size: 6,
                    generations: 3,
                    elite_count: 1,
                    diversity_period: 2,
                    diversity_count: 1,
                    rng_seed: i,
                    ..Default::default()
                };
                let out = ga_optimize(&ctx, &cfg).unwrap();
                ensure!(validate_simplex(out.weights.as_slice(), TOL), "ga weights left the simplex at op {i}");
            }
            4 => {
                let ctx = FitnessContext::new(random_aligned(&mut rng, true)).unwrap();
                let cfg = PsoConfig { swarm_size: 4, iterations: 3, rng_seed: i, ..Default::default() };
                let out = pso_optimize(&ctx, &cfg).unwrap();
                ensure!(validate_simplex(out.weights.as_slice(), TOL), "pso weights left the simplex at op {i}");
            }
            _ => {
                let c = rng.random_range(2..=5);
                let d = rng.random_range(1..=4);
                let n = rng.random_range(1..=5);
                let model = random_model(&mut rng, c, d);
                let reference = random_reference(&mut rng, d, n);
                let targets: Vec<ProbabilityVector> = (0..n)
                    .map(|_| ProbabilityVector::new(uniform_simplex(&mut rng, c)).unwrap())
                    .collect();
                let cfg = DistillationConfig { kd_steps: 3, ..Default::default() };
                let ids = reference.sample_ids().to_vec();
                let (after, _) = client_distill_update(&model, &reference, &ids, &targets, &[], &cfg).unwrap();
                let preds: Vec<ProbabilityVector> =
                    reference.features().iter().map(|x| after.predict_proba(x).unwrap()).collect();
                ensure!(all_simplex(&preds), "distilled model left the simplex at op {i}");
            }
        }
    }
    Ok(format!("10000 operations, per kind {counts:?}"))
}

fn ensemble_beats_best() -> Outcome {
    let cfg = scenarios::shipped("complementary-experts").unwrap().unwrap();
    let out = run(&cfg).map_err(|e| e.to_string())?;
    let rec = &out.probability.as_ref().unwrap().rounds[0];

    // Pass-through oracle: fuse each client's test predictions by hand.
    let world = World::build(&cfg).unwrap();
    let fleet = build_fleet(&cfg, &world.dataset).unwrap();
    let c = cfg.dataset.classes;
    let test = &world.dataset.test;
    let preds: Vec<Vec<ProbabilityVector>> =
        fleet.iter().map(|l| test.iter().map(|s| l.predict(s).unwrap()).collect()).collect();
    let mut hits = 0usize;
    let mut individual = vec![0usize; fleet.len()];
    for (j, s) in test.iter().enumerate() {
        let mut sum = vec![0.0; c];
        for (m, p) in preds.iter().enumerate() {
            for (k, x) in p[j].as_slice().iter().enumerate() {
                sum[k] += x / fleet.len() as f64;
            }
            individual[m] += usize::from(p[j].argmax() == s.label);
        }
        hits += usize::from(argmax_class(&sum) == s.label);
    }
    let n = test.len() as f64;
    let oracle = hits as f64 / n;
    let best = individual.iter().map(|&h| h as f64 / n).fold(0.0, f64::max);
    ensure!(test.len() == 500 && fleet.len() == 3 && c == 5, "scenario shape changed");
    ensure!(rec.ensemble_acc == oracle, "ensemble {} vs oracle {oracle}", rec.ensemble_acc);
    let reported_best = rec.client_acc.values().cloned().fold(0.0, f64::max);
    ensure!(reported_best == best, "best individual {reported_best} vs oracle {best}");
    ensure!(oracle >= best + 0.03, "ensemble {oracle} vs best {best}");
    Ok(format!("ensemble {oracle:.3}, best individual {best:.3}"))
}

fn monotone(trace: &[TracePoint]) -> bool {
    trace.windows(2).all(|w| w[1].best >= w[0].best)
}

fn optimizer_soundness(strategy: &str) -> Outcome {
    let cfg = config("perfect-vs-random", &[("strategy", strategy)]);
    let start = Instant::now();
    let out = run(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let fit = out.fit.as_ref().ok_or("no fit recorded")?;
    let weights = fit.report.weights.as_ref().ok_or("no weights reported")?;
    let fitness = fit.report.fitness.ok_or("no fitness reported")?;
    let w1 = weights.iter().find(|(id, _)| *id == 1).map(|(_, w)| *w).unwrap_or(0.0);

    let ctx = FitnessContext::new(fit.context.clone()).unwrap();
    let grid = simplex_grid(ctx.n_models(), 20)
        .iter()
        .map(|w| ctx.fitness(w))
        .fold(0.0, f64::max);

    ensure!(elapsed < secs(60), "{strategy} took {elapsed:.2?}");
    ensure!(w1 >= 0.9, "weight on the perfect model {w1}, weights {weights:?}");
    ensure!(fitness >= grid - 0.02, "fitness {fitness} vs grid {grid}");
    ensure!(monotone(&fit.report.trace), "best trace decreased");

    // Traces stay monotone whatever the seed.
    for seed in 1..=10u64 {
        let cfg = config("perfect-vs-random", &[("strategy", strategy), ("seed", &seed.to_string())]);
        let start = Instant::now();
        let out = run(&cfg).map_err(|e| e.to_string())?;
        ensure!(start.elapsed() < secs(60), "seed {seed}: took {:.2?}", start.elapsed());
        let trace = &out.fit.as_ref().ok_or("no fit recorded")?.report.trace;
        ensure!(monotone(trace), "seed {seed}: best trace decreased");
    }
    Ok(format!(
        "w1 {w1:.3}, fitness {fitness:.3} vs grid {grid:.3}, single run {elapsed:.2?}, 11 monotone traces"
    ))
}

fn stacking_disjoint() -> Outcome {
    let cfg = parse_scenario(DISJOINT_EXPERTS).unwrap();
    let out = run(&cfg).map_err(|e| e.to_string())?;
    let rec = &out.probability.as_ref().unwrap().rounds[0];
    let iterations = out.fit.as_ref().and_then(|f| f.report.iterations).ok_or("no iteration count")?;
    let best = rec.client_acc.values().cloned().fold(0.0, f64::max);
    ensure!((rec.ensemble_acc - 1.0).abs() <= 0.01, "stacking accuracy {}", rec.ensemble_acc);
    ensure!(best <= 0.6, "best individual {best}");
    ensure!(iterations <= 1000, "{iterations} iterations");
    Ok(format!("stacking {:.3}, best individual {best:.3}, {iterations} iterations", rec.ensemble_acc))
}

fn distillation_loop() -> Outcome {
    let out = run(&config("paper-shape", &[])).map_err(|e| e.to_string())?;
    let kd: Vec<f64> = out
        .probability
        .as_ref()
        .unwrap()
        .rounds
        .iter()
        .map(|r| r.mean_kd.ok_or("missing kd"))
        .collect::<Result<_, _>>()?;
    ensure!(kd.len() == 3, "{} rounds", kd.len());
    ensure!(kd.windows(2).all(|w| w[1] <= w[0]), "kd increased: {kd:?}");
    ensure!(kd[2] <= 0.5 * kd[0], "kd {kd:?} fell by less than half");

    let mut rng = seeded(77);
    for instance in 0..100 {
        let c = rng.random_range(2..=4);
        let d = rng.random_range(1..=5);
        let n = rng.random_range(1..=6);
        let model = random_model(&mut rng, c, d);
        let reference = random_reference(&mut rng, d, n);
        let targets: Vec<ProbabilityVector> =
            (0..n).map(|_| ProbabilityVector::new(uniform_simplex(&mut rng, c)).unwrap()).collect();
        let loss = |m: &SoftmaxLinearModel| kd_objective(m, &reference, &targets, DEFAULT_EPSILON).unwrap().0;
        let (_, grad) = kd_objective(&model, &reference, &targets, DEFAULT_EPSILON).unwrap();
        let analytic: Vec<f64> = grad.weights.iter().chain(&grad.bias).copied().collect();
        let params = model.params();
        let h = 1e-5;
        for (i, a) in analytic.iter().enumerate() {
            let mut p = params.clone();
            p[i] += h;
            let mut plus = model.clone();
            plus.set_params(&p).unwrap();
            p[i] -= 2.0 * h;
            let mut minus = model.clone();
            minus.set_params(&p).unwrap();
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            ensure!(rel < 1e-4, "instance {instance} param {i}: analytic {a}, numeric {numeric}");
        }
    }
    Ok(format!("mean kd {:.3e} -> {:.3e} -> {:.3e}, 100 gradient checks", kd[0], kd[1], kd[2]))
}

fn communication_scaling() -> Outcome {
    // Reference of 100 samples, C = 5, and P = 5 * 199 + 5 = 1000.
    let cfg = config("paper-shape", &[("dataset.features", "199"), ("dataset.val", "500"), ("rounds", "1")]);
    let out = run(&cfg).map_err(|e| e.to_string())?;
    let mut checked = 0;
    for rep in out.reports() {
        for row in &rep.bytes {
            let per = if row.kind == MessageKind::Parameters {
                parameter_message_len(1000)
            } else {
                probability_message_len(100, 5)
            };
            ensure!(row.bytes == row.messages * per, "row {row:?} is not {} per message", per);
            checked += 1;
        }
    }
    let prob = out.probability.as_ref().unwrap();
    let fed = out.fedavg.as_ref().unwrap();
    ensure!(prob.upload_bytes(1, 1) == 2820, "contribution {}", prob.upload_bytes(1, 1));
    ensure!(fed.upload_bytes(1, 1) == 4020, "parameter upload {}", fed.upload_bytes(1, 1));

    // The same law at P = 100,000, measured through a broker.
    let accounting = Accounting::default();
    let broker = InProcBroker::new(accounting.clone());
    let params = Message::Parameters(ParameterMessage { client_id: 1, round: 1, params: vec![0.5; 100_000] });
    let entries = (0..100u64)
        .map(|id| ProbabilityEntry { sample_id: id, probs: ProbabilityVector::uniform(5) })
        .collect();
    let contribution = Message::Contribution(ContributionMessage::new(1, 1, 5, entries).unwrap());
    let p_bytes = broker.publish(1, &topics::params(1), &params).unwrap().bytes;
    let c_bytes = broker.publish(1, &topics::contribution(1), &contribution).unwrap().bytes;
    broker.shutdown();
    ensure!(p_bytes == 400_020 && p_bytes == parameter_message_len(100_000), "parameter message {p_bytes}");
    ensure!(c_bytes == 2820, "contribution {c_bytes}");
    ensure!(accounting.ledger().total_bytes() == p_bytes + c_bytes, "ledger disagrees with acks");
    let ratio = c_bytes as f64 / p_bytes as f64;
    ensure!(ratio <= 0.01, "ratio {ratio}");
    Ok(format!("{checked} byte rows exact, {c_bytes} vs {p_bytes} bytes, ratio {ratio:.6}"))
}

fn dropout_tolerance() -> Outcome {
    let cfg = scenarios::shipped("dropout-tolerance").unwrap().unwrap();
    let out = run(&cfg).map_err(|e| e.to_string())?;
    let rounds = &out.probability.as_ref().unwrap().rounds;
    let counts: Vec<usize> = rounds.iter().map(|r| r.contributors).collect();
    ensure!(counts == [3, 2, 2], "contributors {counts:?}");
    ensure!(rounds.iter().skip(1).all(|r| r.dropped == 1), "drop count not reported");
    let mut accs = Vec::new();
    for r in rounds {
        let best = r
            .client_acc
            .iter()
            .filter(|(&id, _)| r.round < 2 || id != 3)
            .map(|(_, &a)| a)
            .fold(0.0, f64::max);
        ensure!(r.ensemble_acc >= best, "round {}: ensemble {} vs best {best}", r.round, r.ensemble_acc);
        accs.push(format!("{:.3}/{best:.3}", r.ensemble_acc));
    }
    Ok(format!("contributors {counts:?}, ensemble/best {}", accs.join(" ")))
}

fn deterministic_replay() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut single = Duration::ZERO;
    let mut replay = Duration::ZERO;
    for name in scenarios::names() {
        let cfg = scenarios::shipped(name).unwrap().unwrap();
        let (a, b, c) = (root.path().join(format!("{name}-a")), root.path().join(format!("{name}-b")), root.path().join(format!("{name}-c")));
        let start = Instant::now();
        run_to_dir(&cfg, &a).map_err(|e| e.to_string())?;
        single += start.elapsed();

        let start = Instant::now();
        run_to_dir(&cfg, &b).map_err(|e| e.to_string())?;
        let same = replay_check(&a, &b).map_err(|e| e.to_string())?;
        replay += start.elapsed();
        ensure!(same.is_none(), "{name}: same seed differs: {same:?}");

        let other = config(name, &[("seed", &(cfg.seed + 1).to_string())]);
        run_to_dir(&other, &c).map_err(|e| e.to_string())?;
        let diff = replay_check(&a, &c).map_err(|e| e.to_string())?;
        ensure!(diff.is_some(), "{name}: a different seed went undetected");
    }
    ensure!(replay < 2 * single, "replay {replay:.2?} vs single {single:.2?}");
    Ok(format!("{} scenarios, replay {replay:.2?} vs single {single:.2?}", scenarios::names().len()))
}

fn random_probability_entries(rng: &mut SimRng, c: usize, n: usize) -> Vec<ProbabilityEntry> {
    let mut id = 0u64;
    (0..n)
        .map(|_| {
            id += rng.random_range(1..1000);
            ProbabilityEntry { sample_id: id, probs: ProbabilityVector::new(uniform_simplex(rng, c)).unwrap() }
        })
        .collect()
}

fn wire_conformance() -> Outcome {
    let mut rng = seeded(909);
    for i in 0..1000 {
        let c = rng.random_range(2..=8);
        let n = rng.random_range(0..=20);
        let msg = match i % 3 {
            0 => Message::Contribution(
                ContributionMessage::new(rng.random_range(0..1000), rng.random_range(0..100), c, random_probability_entries(&mut rng, c, n)).unwrap(),
            ),
            1 => Message::Broadcast(
                EnsembleBroadcast::new(rng.random_range(0..100), c, random_probability_entries(&mut rng, c, n)).unwrap(),
            ),
            _ => Message::Parameters(ParameterMessage {
                client_id: rng.random_range(0..1000),
                round: rng.random_range(0..100),
                params: (0..rng.random_range(0..200)).map(|_| rng.random_range(-100.0..100.0)).collect(),
            }),
        };
        let bytes = msg.encode().unwrap();
        ensure!(bytes.len() as u64 == msg.encoded_len(), "message {i}: encoded_len disagrees");
        let back = Message::decode(&bytes).unwrap();
        ensure!(back.kind() == msg.kind() && back.round() == msg.round(), "message {i}: header changed");
        ensure!(back.sender() == msg.sender() && back.dimensions() == msg.dimensions(), "message {i}: header changed");
        match (&msg, &back) {
            (Message::Parameters(a), Message::Parameters(b)) => {
                let same = a.params.iter().zip(&b.params).all(|(x, y)| f64::from(*x as f32) == *y);
                ensure!(same, "message {i}: parameters changed beyond f32 rounding");
            }
            (Message::Contribution(_), Message::Contribution(_)) | (Message::Broadcast(_), Message::Broadcast(_)) => {
                let (a, b) = (entries_of(&msg), entries_of(&back));
                for (x, y) in a.iter().zip(b) {
                    ensure!(x.sample_id == y.sample_id, "message {i}: sample ids changed");
                    let close = x.probs.as_slice().iter().zip(y.probs.as_slice()).all(|(p, q)| (p - q).abs() <= 1e-6);
                    ensure!(close, "message {i}: probabilities changed");
                }
            }
            _ => return Err(format!("message {i}: kind changed")),
        }
        ensure!(back.encode().unwrap() == bytes, "message {i}: re-encoding differs");
    }

    let one = Message::Contribution(ContributionMessage::new(1, 1, 5, random_probability_entries(&mut rng, 5, 1)).unwrap());
    let hundred =
        Message::Contribution(ContributionMessage::new(1, 1, 5, random_probability_entries(&mut rng, 5, 100)).unwrap());
    let params = Message::Parameters(ParameterMessage { client_id: 1, round: 1, params: vec![0.25; 1000] });
    let sizes: Vec<usize> = [one, hundred, params].iter().map(|m| m.encode().unwrap().len()).collect();
    ensure!(sizes == [48, 2820, 4020], "sizes {sizes:?}");
    Ok(format!("1000 round trips, sizes {sizes:?}"))
}

fn entries_of(m: &Message) -> &[ProbabilityEntry] {
    match m {
        Message::Contribution(c) => c.entries(),
        Message::Broadcast(b) => b.entries(),
        Message::Parameters(_) => &[],
    }
}

/// Macro F1 computed from the list of (truth, prediction) pairs a matrix stands for.
fn brute_macro_f1(counts: &[[u64; 2]; 2]) -> f64 {
    let mut pairs = Vec::new();
    for (t, row) in counts.iter().enumerate() {
        for (p, &k) in row.iter().enumerate() {
            pairs.extend(std::iter::repeat_n((t, p), k as usize));
        }
    }
    let f1 = |class: usize| {
        let tp = pairs.iter().filter(|&&(t, p)| t == class && p == class).count() as f64;
        let fp = pairs.iter().filter(|&&(t, p)| t != class && p == class).count() as f64;
        let fnn = pairs.iter().filter(|&&(t, p)| t == class && p != class).count() as f64;
        if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fnn)
        }
    };
    (f1(0) + f1(1)) / 2.0
}

fn metric_oracles() -> Outcome {
    let mut matrices = 0;
    for code in 0..81u32 {
        let d = |k: u32| u64::from(code / 3u32.pow(k) % 3);
        let counts = [[d(0), d(1)], [d(2), d(3)]];
        let cm = ConfusionMatrix::from_counts(&[counts[0].to_vec(), counts[1].to_vec()]).unwrap();
        matrices += 1;
        if cm.total() == 0 {
            ensure!(matches!(cm.macro_f1(), Err(CoreError::EmptyMatrix)), "empty matrix accepted");
            continue;
        }
        let got = cm.macro_f1().unwrap();
        let want = brute_macro_f1(&counts);
        ensure!((got - want).abs() <= 1e-12, "{counts:?}: {got} vs {want}");
    }

    let mut rng = seeded(4242);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(2..=10);
        let p = uniform_simplex(&mut rng, c);
        let q = uniform_simplex(&mut rng, c);
        let direct: f64 = p.iter().zip(&q).filter(|(&a, _)| a > 0.0).map(|(a, b)| a * (a / b).ln()).sum();
        let got = kl_divergence(&p, &q, f64::MIN_POSITIVE).unwrap();
        worst = worst.max((got - direct).abs());
    }
    ensure!(worst <= 1e-12, "kl error {worst}");
    Ok(format!("{matrices} matrices, 1000 kl pairs, max kl error {worst:.1e}"))
}

#[test]
fn acceptance() {
    let results = [
        criterion(1, "simplex suite", secs(10), simplex_suite),
        criterion(2, "ensemble beats best member", secs(5), ensemble_beats_best),
        criterion(3, "ga soundness", secs(60), || optimizer_soundness("ga")),
        criterion(3, "pso soundness", secs(60), || optimizer_soundness("pso")),
        criterion(4, "stacking on disjoint experts", secs(10), stacking_disjoint),
        criterion(5, "distillation loop", secs(30), distillation_loop),
        criterion(6, "communication scaling", secs(5), communication_scaling),
        criterion(7, "dropout tolerance", secs(10), dropout_tolerance),
        criterion(8, "deterministic replay", secs(600), deterministic_replay),
        criterion(9, "wire conformance", secs(5), wire_conformance),
        criterion(10, "metric oracles", secs(5), metric_oracles),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}
