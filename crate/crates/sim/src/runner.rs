//! Seeded end-to-end driver for a scenario.
//!
//! Clients are stepped one at a time in a per-round order drawn from the
//! schedule stream; everything they exchange goes through the transport.
//! Accuracy on the test split is measured by the harness, outside the
//! protocol.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use probfed_core::rng::{derive_seed, seeded, tag};
use probfed_core::{generate_dataset, ConfusionMatrix, Dataset, LabeledSample, ProbabilityVector, SoftmaxLinearModel};
use probfed_ensemble::{mean_kd, AlignedProbabilities, FitReport, ReferenceSet, StrategyParams, StrategyRegistry};
use probfed_transport::{
    open_transport, topics, Broker, ByteLedger, ContributionMessage, Message, MessageKind, ParameterMessage,
    ProbabilityEntry, Transport,
};
use rand::seq::SliceRandom;

use crate::config::{echo, ScenarioConfig, FEDAVG};
use crate::coordinator::{CollectPolicy, Coordinator, FedAvgServer};
use crate::error::SimError;
use crate::fleet::{build_fleet, ClientLearner};
use crate::report::{
    compare_paradigms, cross_check_bytes, fmt_f64, msg_subject, write_artifacts, BytesRow, ComparisonRow,
    Paradigm, ParadigmReport, RoundRecord, TraceRow,
};

/// Rounds stop early once mean KD moves less than this between rounds.
pub const CONVERGENCE_TOL: f64 = 1e-6;

/// Shared data of a run: the splits and the reference set.
pub struct World {
    pub dataset: Dataset,
    pub reference: ReferenceSet,
    pub reference_labels: HashMap<u64, usize>,
}

impl World {
    pub fn build(cfg: &ScenarioConfig) -> Result<Self, SimError> {
        let spec = cfg
            .dataset
            .spec(derive_seed(cfg.seed, tag("dataset")))
            .map_err(|e| SimError::Core(probfed_core::CoreError::InvalidSpec(e)))?;
        let dataset = generate_dataset(&spec)?;
        let n = ((cfg.reference_fraction * dataset.val.len() as f64).round() as usize).clamp(1, dataset.val.len());
        let mut picked: Vec<LabeledSample> = dataset.val.clone();
        picked.shuffle(&mut seeded(derive_seed(cfg.seed, tag("reference"))));
        picked.truncate(n);
        let reference = ReferenceSet::from_samples(1, &picked)?;
        let reference_labels = picked.iter().map(|s| (s.sample_id, s.label)).collect();
        Ok(Self {
            dataset,
            reference,
            reference_labels,
        })
    }
}

/// The round in which a weight or stacking strategy was fitted.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub round: u32,
    pub report: FitReport,
    /// Labelled reference contributions the fit saw.
    pub context: AlignedProbabilities,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub probability: Option<ParadigmReport>,
    pub fedavg: Option<ParadigmReport>,
    pub comparison: Option<Vec<ComparisonRow>>,
    pub fit: Option<FitOutcome>,
}

impl RunOutput {
    pub fn reports(&self) -> Vec<&ParadigmReport> {
        self.probability.iter().chain(self.fedavg.iter()).collect()
    }
}

fn score(preds: &[ProbabilityVector], labels: &[usize], n_classes: usize) -> Result<(f64, f64), SimError> {
    let argmax: Vec<usize> = preds.iter().map(|p| p.argmax()).collect();
    let cm = ConfusionMatrix::from_predictions(&argmax, labels, n_classes)?;
    Ok((cm.accuracy()?, cm.macro_f1()?))
}

fn strategy_params(cfg: &ScenarioConfig) -> StrategyParams {
    let mut ga = cfg.ga;
    ga.rng_seed = derive_seed(cfg.seed, tag("ga"));
    let mut pso = cfg.pso;
    pso.rng_seed = derive_seed(cfg.seed, tag("pso"));
    StrategyParams {
        weights: cfg.weights.clone(),
        stacking: cfg.stacking,
        ga,
        pso,
    }
}

fn policy(cfg: &ScenarioConfig) -> CollectPolicy {
    CollectPolicy {
        roster: cfg.clients.iter().map(|c| c.id).collect(),
        min_contributions: cfg.min_contributions,
        wait: Duration::from_millis(cfg.wait_ms),
        poll_timeout: Duration::from_millis(cfg.poll_timeout_ms),
    }
}

fn connect_all(cfg: &ScenarioConfig, transport: &dyn Transport) -> Result<BTreeMap<u32, Arc<dyn Broker>>, SimError> {
    cfg.clients
        .iter()
        .map(|c| Ok((c.id, transport.connect(c.id)?)))
        .collect()
}

/// Ledger delta since `before` as bytes rows, plus the round's `msg` trace rows.
fn close_round(
    transport: &dyn Transport,
    round: u32,
    before: &mut ByteLedger,
    report: &mut ParadigmReport,
) -> (u64, u64) {
    let now = transport.ledger();
    let delta = now.since(before);
    *before = now;
    let (mut prob, mut params) = (0, 0);
    for (k, e) in delta.iter() {
        report.bytes.push(BytesRow {
            round,
            endpoint: k.endpoint,
            direction: k.direction,
            kind: k.kind,
            messages: e.messages,
            bytes: e.bytes,
        });
        if k.kind == MessageKind::Parameters {
            params += e.bytes;
        } else {
            prob += e.bytes;
        }
    }
    let mut transfers = transport.drain_transfers();
    transfers.sort_by_key(|t| (t.endpoint, t.direction, t.kind, t.count, t.n_classes));
    let mut step = 0;
    let mut last = None;
    for t in transfers {
        let key = (t.endpoint, t.direction, t.kind);
        step = if last == Some(key) { step + 1 } else { 0 };
        last = Some(key);
        report.trace.push(TraceRow {
            round,
            record: "msg",
            subject: msg_subject(t.endpoint, t.direction, t.kind),
            step,
            a: t.count.to_string(),
            b: t.n_classes.to_string(),
        });
    }
    (prob, params)
}

fn loss_rows(report: &mut ParadigmReport, round: u32, record: &'static str, subject: u32, trace: &[f64]) {
    for (step, &loss) in trace.iter().enumerate() {
        report.trace.push(TraceRow {
            round,
            record,
            subject: subject.to_string(),
            step,
            a: fmt_f64(loss),
            b: String::new(),
        });
    }
}

fn fit_rows(report: &mut ParadigmReport, round: u32, strategy: &str, fit: &FitReport) {
    let record = match strategy {
        "ga" => "ga",
        "pso" => "pso",
        "stacking" => "stacking",
        _ => "fit",
    };
    for p in &fit.trace {
        report.trace.push(TraceRow {
            round,
            record,
            subject: "server".into(),
            step: p.step,
            a: fmt_f64(p.best),
            b: if record == "stacking" { String::new() } else { fmt_f64(p.mean) },
        });
    }
    for (i, (id, w)) in fit.weights.iter().flatten().enumerate() {
        report.trace.push(TraceRow {
            round,
            record: "weight",
            subject: id.to_string(),
            step: i,
            a: fmt_f64(*w),
            b: String::new(),
        });
    }
}

fn shuffled_online(
    fleet: &[Box<dyn ClientLearner>],
    links: &BTreeMap<u32, Arc<dyn Broker>>,
    rng: &mut probfed_core::rng::SimRng,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fleet.len()).filter(|&i| links.contains_key(&fleet[i].id())).collect();
    order.shuffle(rng);
    order
}

fn drop_offline(cfg: &ScenarioConfig, round: u32, links: &mut BTreeMap<u32, Arc<dyn Broker>>) {
    for c in &cfg.clients {
        if !c.online_in(round) {
            links.remove(&c.id);
        }
    }
}

/// The probability-exchange feedback loop.
fn run_probability(
    cfg: &ScenarioConfig,
    world: &World,
    transport: &dyn Transport,
) -> Result<(ParadigmReport, Option<FitOutcome>), SimError> {
    let c = cfg.dataset.classes;
    let roster: Vec<u32> = cfg.clients.iter().map(|c| c.id).collect();
    let mut report = ParadigmReport::new(Paradigm::Probability, &cfg.name, cfg.seed, roster.clone());
    let mut fleet = build_fleet(cfg, &world.dataset)?;
    let mut links = connect_all(cfg, transport)?;
    let strategy = StrategyRegistry::builtin().create(&cfg.strategy, &strategy_params(cfg))?;
    let mut coordinator = Coordinator::new(
        transport.server(),
        policy(cfg),
        strategy,
        cfg.fit_round,
        world.reference_labels.clone(),
    );
    let reference: Vec<LabeledSample> = world.reference.samples().collect();
    let test = &world.dataset.test;
    let test_ids: Vec<u64> = test.iter().map(|s| s.sample_id).collect();
    let test_labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let any_trainable = cfg.clients.iter().any(|c| c.is_trainable());
    let mut schedule = seeded(derive_seed(cfg.seed, tag("schedule")));
    let mut ledger = transport.ledger();
    let mut fit_outcome = None;
    let mut prev_kd: Option<f64> = None;

    for round in 1..=cfg.rounds {
        drop_offline(cfg, round, &mut links);
        let (mut state, sub) = coordinator.open_round(round)?;
        let order = shuffled_online(&fleet, &links, &mut schedule);
        let mut ensemble_subs = BTreeMap::new();
        let mut test_preds: BTreeMap<u32, Vec<ProbabilityVector>> = BTreeMap::new();
        for &i in &order {
            let learner = &mut fleet[i];
            let id = learner.id();
            let link = &links[&id];
            ensemble_subs.insert(id, link.subscribe(id, &topics::ensemble(round))?);
            let trace = learner.local_round(round)?;
            loss_rows(&mut report, round, "local", id, &trace);
            let entries = reference
                .iter()
                .map(|s| {
                    Ok(ProbabilityEntry {
                        sample_id: s.sample_id,
                        probs: learner.predict(s)?,
                    })
                })
                .collect::<Result<Vec<_>, SimError>>()?;
            let msg = ContributionMessage::new(id, round, c, entries)?;
            link.publish(id, &topics::contribution(round), &Message::Contribution(msg))?;
            let preds = test.iter().map(|s| learner.predict(s)).collect::<Result<Vec<_>, _>>()?;
            test_preds.insert(id, preds);
        }

        coordinator.collect(&mut state, sub)?;
        let agg = coordinator.aggregate_round(&mut state)?;
        if let (Some(fit), Some(context)) = (&agg.fit, &agg.fit_context) {
            fit_rows(&mut report, round, &cfg.strategy, fit);
            fit_outcome = Some(FitOutcome {
                round,
                report: fit.clone(),
                context: context.clone(),
            });
        }

        let contributors = agg.contributors().to_vec();
        let rows: Vec<Vec<ProbabilityVector>> = (0..test.len())
            .map(|j| contributors.iter().map(|id| test_preds[id][j].clone()).collect())
            .collect();
        let test_aligned = AlignedProbabilities::new(contributors.clone(), c, test_ids.clone(), rows)?;
        let fused = coordinator.fuse(&test_aligned)?;
        let (ensemble_acc, ensemble_f1) = score(&fused, &test_labels, c)?;
        let mut client_acc = BTreeMap::new();
        for id in &contributors {
            client_acc.insert(*id, score(&test_preds[id], &test_labels, c)?.0);
        }
        let mut kd_sum = 0.0;
        for m in 0..contributors.len() {
            let local: Vec<ProbabilityVector> = agg.aligned.model_column(m).into_iter().cloned().collect();
            kd_sum += mean_kd(&agg.fused, &local, cfg.distill.epsilon)?;
        }
        let round_kd = kd_sum / contributors.len() as f64;

        for &i in &order {
            let learner = &mut fleet[i];
            let id = learner.id();
            let link = &links[&id];
            let sub = ensemble_subs.remove(&id).expect("subscribed above");
            let got = link.poll(&sub, Duration::from_millis(cfg.wait_ms.max(cfg.poll_timeout_ms)));
            link.unsubscribe(sub)?;
            let Ok(Message::Broadcast(b)) = got else {
                report.trace.push(TraceRow {
                    round,
                    record: "kd_skip",
                    subject: id.to_string(),
                    step: 0,
                    a: "no_broadcast".into(),
                    b: String::new(),
                });
                continue;
            };
            let ids: Vec<u64> = b.entries().iter().map(|e| e.sample_id).collect();
            let targets: Vec<ProbabilityVector> = b.entries().iter().map(|e| e.probs.clone()).collect();
            match learner.distill(&world.reference, &ids, &targets, &cfg.distill)? {
                Some(trace) => loss_rows(&mut report, round, "kd", id, &trace),
                None => report.trace.push(TraceRow {
                    round,
                    record: "kd_skip",
                    subject: id.to_string(),
                    step: 0,
                    a: learner.kind().into(),
                    b: String::new(),
                }),
            }
        }

        let (bytes_probability, bytes_parameters) = close_round(transport, round, &mut ledger, &mut report);
        report.rounds.push(RoundRecord {
            round,
            strategy: agg.strategy.to_string(),
            contributors: contributors.len(),
            dropped: roster.len().saturating_sub(contributors.len()),
            stale: state.stale(),
            ensemble_acc,
            ensemble_f1,
            client_acc,
            mean_kd: Some(round_kd),
            bytes_probability,
            bytes_parameters,
        });
        if any_trainable && prev_kd.is_some_and(|p| (p - round_kd).abs() < CONVERGENCE_TOL) {
            break;
        }
        prev_kd = Some(round_kd);
    }
    Ok((report, fit_outcome))
}

/// The parameter-averaging comparator over the same roster and data.
fn run_fedavg(cfg: &ScenarioConfig, world: &World, transport: &dyn Transport) -> Result<ParadigmReport, SimError> {
    let (c, d) = (cfg.dataset.classes, cfg.dataset.features);
    let roster: Vec<u32> = cfg.clients.iter().map(|c| c.id).collect();
    let mut report = ParadigmReport::new(Paradigm::FedAvg, &cfg.name, cfg.seed, roster.clone());
    let mut fleet = build_fleet(cfg, &world.dataset)?;
    let mut links = connect_all(cfg, transport)?;
    let server = FedAvgServer::new(transport.server(), policy(cfg), c, d);
    let test = &world.dataset.test;
    let test_labels: Vec<usize> = test.iter().map(|s| s.label).collect();
    let mut schedule = seeded(derive_seed(cfg.seed, tag("schedule")));
    let mut ledger = transport.ledger();
    let mut global = SoftmaxLinearModel::zeros(c, d);

    for round in 1..=cfg.rounds {
        drop_offline(cfg, round, &mut links);
        let (mut state, sub) = server.open_round(round)?;
        let order = shuffled_online(&fleet, &links, &mut schedule);
        let mut client_acc = BTreeMap::new();
        for &i in &order {
            let learner = &mut fleet[i];
            let id = learner.id();
            learner.load_parameters(&global.params())?;
            let trace = if round == 1 {
                learner.local_round(1)?
            } else {
                learner.train(cfg.fedavg_epochs)?
            };
            loss_rows(&mut report, round, "local", id, &trace);
            let preds = test.iter().map(|s| learner.predict(s)).collect::<Result<Vec<_>, _>>()?;
            client_acc.insert(id, score(&preds, &test_labels, c)?.0);
            let params = learner.parameters().ok_or(SimError::ShapeMismatch)?;
            let msg = Message::Parameters(ParameterMessage {
                client_id: id,
                round,
                params,
            });
            links[&id].publish(id, &topics::params(round), &msg)?;
        }
        server.collect(&mut state, &sub)?;
        let averaged = server.average(&state)?;
        let mut subs = BTreeMap::new();
        for &i in &order {
            let id = fleet[i].id();
            subs.insert(id, links[&id].subscribe(id, &topics::params(round))?);
        }
        server.broadcast(&mut state, sub, averaged)?;
        for &i in &order {
            let id = fleet[i].id();
            let link = &links[&id];
            let sub = subs.remove(&id).expect("subscribed above");
            let got = link.poll(&sub, Duration::from_millis(cfg.wait_ms.max(cfg.poll_timeout_ms)));
            link.unsubscribe(sub)?;
            if let Ok(Message::Parameters(p)) = got {
                global.set_params(&p.params)?;
            }
        }
        let preds = test.iter().map(|s| global.predict_proba(&s.features)).collect::<Result<Vec<_>, _>>()?;
        let (ensemble_acc, ensemble_f1) = score(&preds, &test_labels, c)?;
        let (bytes_probability, bytes_parameters) = close_round(transport, round, &mut ledger, &mut report);
        report.rounds.push(RoundRecord {
            round,
            strategy: FEDAVG.to_string(),
            contributors: state.len(),
            dropped: roster.len().saturating_sub(state.len()),
            stale: state.stale(),
            ensemble_acc,
            ensemble_f1,
            client_acc,
            mean_kd: None,
            bytes_probability,
            bytes_parameters,
        });
    }
    Ok(report)
}

/// Runs the scenario's paradigm(s) in memory.
pub fn run(cfg: &ScenarioConfig) -> Result<RunOutput, SimError> {
    let world = World::build(cfg)?;
    let transport = open_transport(cfg.transport, cfg.port)?;
    let result = (|| {
        let (probability, fit) = if cfg.strategy == FEDAVG {
            (None, None)
        } else {
            let (r, f) = run_probability(cfg, &world, transport.as_ref())?;
            (Some(r), f)
        };
        let fedavg = if cfg.uses_fedavg() {
            Some(run_fedavg(cfg, &world, transport.as_ref())?)
        } else {
            None
        };
        let comparison = match (&probability, &fedavg) {
            (Some(p), Some(f)) => Some(compare_paradigms(p, f)?),
            _ => None,
        };
        Ok(RunOutput {
            config: cfg.clone(),
            probability,
            fedavg,
            comparison,
            fit,
        })
    })();
    transport.shutdown();
    result
}

/// Runs the scenario, writes its artifacts into `dir` and cross-checks
/// `bytes.csv` against `trace.csv`.
pub fn run_to_dir(cfg: &ScenarioConfig, dir: &Path) -> Result<RunOutput, SimError> {
    let out = run(cfg)?;
    write_artifacts(dir, &out.reports(), out.comparison.as_deref(), &echo(cfg))?;
    cross_check_bytes(dir)?;
    Ok(out)
}
