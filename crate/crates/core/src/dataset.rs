//! Seeded Gaussian-cluster datasets with configurable class imbalance.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use crate::error::CoreError;
use crate::rng::{derive_seed, seeded, tag};
use crate::simplex::WeightVector;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub sample_id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_classes: usize,
    pub feature_dim: usize,
    pub class_proportions: WeightVector,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Euclidean distance between any two class means.
    pub cluster_separation: f64,
    pub rng_seed: u64,
}

impl DatasetSpec {
    pub fn balanced(n_classes: usize, feature_dim: usize, n: [usize; 3], sep: f64, seed: u64) -> Self {
        Self {
            n_classes,
            feature_dim,
            class_proportions: WeightVector::uniform(n_classes),
            n_train: n[0],
            n_val: n[1],
            n_test: n[2],
            cluster_separation: sep,
            rng_seed: seed,
        }
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let mut problems = Vec::new();
        if self.n_classes < 2 {
            problems.push(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.class_proportions.len() != self.n_classes {
            problems.push(format!(
                "class_proportions has {} entries for {} classes",
                self.class_proportions.len(),
                self.n_classes
            ));
        }
        if self.feature_dim < self.n_classes {
            problems.push(format!(
                "feature_dim {} must be at least n_classes {} (one axis per class mean)",
                self.feature_dim, self.n_classes
            ));
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            problems.push("split sizes must be positive".to_string());
        }
        if !(self.cluster_separation >= 0.0) || !self.cluster_separation.is_finite() {
            problems.push(format!(
                "cluster_separation must be finite and >= 0, got {}",
                self.cluster_separation
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CoreError::InvalidSpec(problems.join("; ")))
        }
    }

    /// Class means sit on scaled coordinate axes, so every pair is exactly
    /// `cluster_separation` apart.
    pub fn class_mean(&self, class: usize) -> Vec<f64> {
        let mut mean = vec![0.0; self.feature_dim];
        mean[class] = self.cluster_separation / std::f64::consts::SQRT_2;
        mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

/// Largest-remainder apportionment of `n` items over `proportions`.
/// Remainder ties go to the lower class index.
pub fn class_counts(proportions: &[f64], n: usize) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().take(n.saturating_sub(assigned)) {
        counts[c] += 1;
    }
    counts
}

pub fn generate_dataset(spec: &DatasetSpec) -> Result<Dataset, CoreError> {
    spec.validate()?;
    let means: Vec<Vec<f64>> = (0..spec.n_classes).map(|c| spec.class_mean(c)).collect();
    let mut next_id = 0u64;
    let mut split = |name: &str, n: usize| {
        let mut rng = seeded(derive_seed(spec.rng_seed, tag(name)));
        let counts = class_counts(&spec.class_proportions, n);
        let mut labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k))
            .collect();
        labels.shuffle(&mut rng);
        labels
            .into_iter()
            .map(|label| {
                let features = means[label]
                    .iter()
                    .map(|m| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        m + z
                    })
                    .collect();
                let sample = LabeledSample {
                    sample_id: next_id,
                    features,
                    label,
                };
                next_id += 1;
                sample
            })
            .collect::<Vec<_>>()
    };
    let train = split("train", spec.n_train);
    let val = split("val", spec.n_val);
    let test = split("test", spec.n_test);
    Ok(Dataset { train, val, test })
}
