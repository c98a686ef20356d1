#![allow(dead_code)]

use probfed_core::{Concentration, LabeledSample, ProbabilityVector, SyntheticClassifier};
use probfed_ensemble::AlignedProbabilities;

pub fn balanced_samples(n: usize, c: usize) -> Vec<LabeledSample> {
    (0..n)
        .map(|i| LabeledSample {
            sample_id: i as u64,
            features: vec![],
            label: i % c,
        })
        .collect()
}

pub fn align_classifiers(clfs: &[SyntheticClassifier], samples: &[LabeledSample]) -> AlignedProbabilities {
    let c = clfs[0].n_classes();
    let rows = samples
        .iter()
        .map(|s| clfs.iter().map(|m| m.predict(s).unwrap()).collect())
        .collect();
    AlignedProbabilities::new(
        (0..clfs.len() as u32).collect(),
        c,
        samples.iter().map(|s| s.sample_id).collect(),
        rows,
    )
    .unwrap()
    .with_labels(samples.iter().map(|s| s.label).collect())
    .unwrap()
}

/// One model that always ranks the true class first by a thin margin, and
/// two noisy random guessers.
pub fn perfect_vs_random(n: usize, seed: u64) -> AlignedProbabilities {
    let c = 5;
    let perfect_rows = (0..c)
        .map(|t| {
            let mut r = vec![0.19; c];
            r[t] = 0.24;
            ProbabilityVector::new(r).unwrap()
        })
        .collect();
    let perfect = SyntheticClassifier::new(perfect_rows, Concentration::Infinite, seed).unwrap();
    let noisy = |s| {
        SyntheticClassifier::new(vec![ProbabilityVector::uniform(c); c], Concentration::Finite(1.0), s).unwrap()
    };
    align_classifiers(&[perfect, noisy(seed + 1), noisy(seed + 2)], &balanced_samples(n, c))
}

/// Each model is certain on its own half of the classes. Elsewhere it is
/// uninformative: a near-uniform row tilted toward its own classes, so the
/// lowest-index tie-break cannot hand it free hits.
pub fn disjoint_experts(n: usize) -> AlignedProbabilities {
    let c = 4;
    let expert = |classes: &[usize]| {
        let rows = (0..c)
            .map(|t| {
                if classes.contains(&t) {
                    ProbabilityVector::one_hot(c, t)
                } else {
                    let row: Vec<f64> = (0..c).map(|k| if classes.contains(&k) { 0.3 } else { 0.2 }).collect();
                    ProbabilityVector::new(row).unwrap()
                }
            })
            .collect();
        SyntheticClassifier::new(rows, Concentration::Infinite, 0).unwrap()
    };
    align_classifiers(&[expert(&[0, 1]), expert(&[2, 3])], &balanced_samples(n, c))
}
