mod common;

use probfed_core::{argmax_class, validate_simplex, ProbabilityVector, WeightVector, SIMPLEX_TOL};
use probfed_ensemble::{
    align, build_features, fused_accuracy, individual_accuracies, mean_fuse, predict_stacking,
    split_features, train_stacking, weighted_fuse, AlignedProbabilities, EnsembleError,
    StackingConfig, StrategyParams, StrategyRegistry,
};
use probfed_transport::{ContributionMessage, ProbabilityEntry};
use proptest::prelude::*;

fn contribution(client: u32, ids: &[u64]) -> ContributionMessage {
    let entries = ids
        .iter()
        .map(|&sample_id| ProbabilityEntry {
            sample_id,
            probs: ProbabilityVector::uniform(3),
        })
        .collect();
    ContributionMessage::new(client, 0, 3, entries).unwrap()
}

#[test]
fn align_is_an_inner_join() {
    let a = contribution(1, &[1, 2, 3]);
    let b = contribution(2, &[2, 3, 4]);
    let al = align(&[&b, &a]).unwrap();
    assert_eq!(al.sample_ids(), &[2, 3]);
    assert_eq!(al.dropped(), 2);
    assert_eq!(al.model_order(), &[1, 2]);

    let same = align(&[&a, &contribution(5, &[1, 2, 3])]).unwrap();
    assert_eq!(same.dropped(), 0);
    assert_eq!(same.n_samples(), 3);

    let empty = align(&[&a, &contribution(9, &[])]).unwrap();
    assert!(empty.is_empty());
}

#[test]
fn align_rejects_duplicates_and_mixed_class_counts() {
    let a = contribution(1, &[1]);
    assert_eq!(align(&[&a, &a]), Err(EnsembleError::DuplicateClient(1)));
    let two = ContributionMessage::new(
        2,
        0,
        2,
        vec![ProbabilityEntry { sample_id: 1, probs: ProbabilityVector::uniform(2) }],
    )
    .unwrap();
    assert!(matches!(align(&[&a, &two]), Err(EnsembleError::InconsistentC { .. })));
}

fn arb_alignment() -> impl Strategy<Value = AlignedProbabilities> {
    (1usize..5, 2usize..6, 1usize..20).prop_flat_map(|(m, c, n)| {
        prop::collection::vec(prop::collection::vec(prop::collection::vec(0.001f64..1.0, c), m), n).prop_map(
            move |raw| {
                let rows = raw
                    .iter()
                    .map(|r| r.iter().map(|p| ProbabilityVector::from_unnormalized(p).unwrap()).collect())
                    .collect();
                AlignedProbabilities::new((0..m as u32).map(|i| 10 * i).collect(), c, (0..n as u64).collect(), rows)
                    .unwrap()
            },
        )
    })
}

fn arb_weights(m: usize) -> impl Strategy<Value = WeightVector> {
    prop::collection::vec(0.0f64..1.0, m)
        .prop_map(|mut w| {
            w[0] += 1e-6;
            WeightVector::from_unnormalized(&w).unwrap()
        })
}

proptest! {
    #[test]
    fn fusion_stays_on_simplex(a in arb_alignment(), seed in any::<u64>()) {
        let m = a.n_models();
        let w: Vec<f64> = (0..m).map(|i| ((seed >> (i * 8)) & 0xff) as f64 + 1.0).collect();
        let w = WeightVector::from_unnormalized(&w).unwrap();
        for p in mean_fuse(&a).unwrap().iter().chain(&weighted_fuse(&a, &w).unwrap()) {
            prop_assert!(validate_simplex(p, SIMPLEX_TOL));
        }
    }

    #[test]
    fn uniform_weights_equal_mean(a in arb_alignment()) {
        let u = weighted_fuse(&a, &WeightVector::uniform(a.n_models())).unwrap();
        let m = mean_fuse(&a).unwrap();
        for (x, y) in u.iter().zip(&m) {
            for (p, q) in x.iter().zip(y.iter()) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn one_hot_weights_select_a_model(a in arb_alignment(), k in 0usize..5) {
        let k = k % a.n_models();
        let f = weighted_fuse(&a, &WeightVector::one_hot(a.n_models(), k)).unwrap();
        for (row, fused) in a.rows().iter().zip(&f) {
            prop_assert_eq!(fused.argmax(), argmax_class(&row[k]));
        }
    }

    #[test]
    fn features_are_lossless(a in arb_alignment()) {
        let f = build_features(&a);
        prop_assert!(f.iter().all(|r| r.len() == a.n_models() * a.n_classes()));
        let back = split_features(&f, a.n_models(), a.n_classes()).unwrap();
        prop_assert_eq!(back.as_slice(), a.rows());
    }

    #[test]
    fn reordering_models_permutes_feature_blocks(a in arb_alignment()) {
        let mut order = a.model_order().to_vec();
        order.reverse();
        let r = a.reorder_with_fill(&order);
        let (m, c) = (a.n_models(), a.n_classes());
        for (x, y) in build_features(&a).iter().zip(build_features(&r)) {
            for b in 0..m {
                prop_assert_eq!(&x[b * c..(b + 1) * c], &y[(m - 1 - b) * c..(m - b) * c]);
            }
        }
    }

    #[test]
    fn weighted_fusion_with_random_weights(a in arb_alignment(), w in arb_weights(4)) {
        let m = a.n_models();
        let w = WeightVector::from_unnormalized(&w[..m]).unwrap_or_else(|_| WeightVector::uniform(m));
        for p in weighted_fuse(&a, &w).unwrap() {
            prop_assert!(validate_simplex(&p, SIMPLEX_TOL));
        }
    }
}

#[test]
fn stacking_recovers_disjoint_experts() {
    let a = common::disjoint_experts(200);
    let labels = a.labels().unwrap().to_vec();

    // Oracle: trust whichever model is certain.
    let oracle_hits = a
        .rows()
        .iter()
        .zip(&labels)
        .filter(|(row, &l)| {
            let confident = row.iter().find(|p| p.contains(&1.0)).unwrap();
            confident.argmax() == l
        })
        .count();
    assert_eq!(oracle_hits, 200);

    let best_individual = individual_accuracies(&a).unwrap().into_iter().fold(0.0, f64::max);
    assert!(best_individual <= 0.6, "best individual {best_individual}");

    let fit = train_stacking(&a, &StackingConfig::default()).unwrap();
    assert!(fit.iterations <= 1000);
    let acc = fused_accuracy(&a, &predict_stacking(&fit.model, &a).unwrap()).unwrap();
    assert!((acc - 1.0).abs() <= 0.01, "stacking accuracy {acc}");
}

#[test]
fn stacking_beats_majority_class_rate() {
    let a = common::perfect_vs_random(150, 4);
    let labels = a.labels().unwrap();
    let mut counts = [0usize; 5];
    labels.iter().for_each(|&l| counts[l] += 1);
    let majority = *counts.iter().max().unwrap() as f64 / labels.len() as f64;
    let fit = train_stacking(&a, &StackingConfig::default()).unwrap();
    let acc = fused_accuracy(&a, &predict_stacking(&fit.model, &a).unwrap()).unwrap();
    assert!(acc >= majority, "{acc} < {majority}");
}

#[test]
fn stacking_on_identical_perfect_models_matches_them() {
    let c = 3;
    let ids: Vec<u64> = (0..60).collect();
    let labels: Vec<usize> = ids.iter().map(|&i| (i % 3) as usize).collect();
    let rows = labels
        .iter()
        .map(|&l| {
            let mut p = vec![0.1; c];
            p[l] = 0.8;
            let p = ProbabilityVector::new(p).unwrap();
            vec![p.clone(), p]
        })
        .collect();
    let a = AlignedProbabilities::new(vec![1, 2], c, ids, rows).unwrap().with_labels(labels).unwrap();
    let best = individual_accuracies(&a).unwrap().into_iter().fold(0.0, f64::max);
    let fit = train_stacking(&a, &StackingConfig::default()).unwrap();
    let acc = fused_accuracy(&a, &predict_stacking(&fit.model, &a).unwrap()).unwrap();
    assert!(acc >= best);
}

#[test]
fn stacking_substitutes_uniform_for_missing_clients() {
    let a = common::disjoint_experts(40);
    let registry = StrategyRegistry::builtin();
    let mut s = registry.create("stacking", &StrategyParams::default()).unwrap();
    s.fit(&a).unwrap();
    let only_first = a.reorder_with_fill(&[0]);
    let out = s.fuse(&only_first).unwrap();
    assert_eq!(out.len(), 40);
    assert!(out.iter().all(|p| validate_simplex(p, SIMPLEX_TOL)));
}

#[test]
fn weighted_strategy_renormalizes_over_present_models() {
    let a = common::disjoint_experts(8);
    let registry = StrategyRegistry::builtin();
    let params = StrategyParams { weights: Some(vec![3.0, 1.0]), ..Default::default() };
    let mut s = registry.create("weighted", &params).unwrap();
    let report = s.fit(&a).unwrap();
    assert_eq!(report.weights.unwrap(), vec![(0, 0.75), (1, 0.25)]);
    // With model 1 gone, model 0 alone carries all weight.
    let present = AlignedProbabilities::new(
        vec![0],
        4,
        a.sample_ids().to_vec(),
        a.rows().iter().map(|r| vec![r[0].clone()]).collect(),
    )
    .unwrap();
    let fused = s.fuse(&present).unwrap();
    for (f, r) in fused.iter().zip(a.rows()) {
        assert_eq!(f, &r[0]);
    }
}
