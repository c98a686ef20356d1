//! Multinomial logistic meta-classifier over concatenated client probabilities.

use std::collections::BTreeSet;

use probfed_core::learners::Reduction;
use probfed_core::{ProbabilityVector, SoftmaxLinearModel};

use crate::align::AlignedProbabilities;
use crate::error::EnsembleError;
use crate::fusion::build_features;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackingConfig {
    /// Regularization strength; the objective is mean CE + (l2 / 2n)·||θ||².
    pub l2: f64,
    pub max_iter: usize,
    /// Stop once the objective changes by less than this between iterations.
    pub tol: f64,
}

impl Default for StackingConfig {
    fn default() -> Self {
        Self {
            l2: 1.0,
            max_iter: 1000,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackingModel {
    meta: SoftmaxLinearModel,
    model_order: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackingFit {
    pub model: StackingModel,
    /// Objective before each update plus the final value.
    pub losses: Vec<f64>,
    pub iterations: usize,
}

impl StackingModel {
    pub fn new(meta: SoftmaxLinearModel, model_order: Vec<u32>) -> Result<Self, EnsembleError> {
        let m = model_order.len();
        let c = meta.n_classes();
        if meta.n_features() != m * c {
            return Err(EnsembleError::LengthMismatch {
                expected: m * c,
                got: meta.n_features(),
            });
        }
        let unique: BTreeSet<_> = model_order.iter().collect();
        if unique.len() != m {
            let dup = model_order
                .iter()
                .find(|id| model_order.iter().filter(|x| x == id).count() > 1)
                .copied()
                .unwrap_or_default();
            return Err(EnsembleError::DuplicateClient(dup));
        }
        Ok(Self { meta, model_order })
    }

    pub fn meta(&self) -> &SoftmaxLinearModel {
        &self.meta
    }

    pub fn model_order(&self) -> &[u32] {
        &self.model_order
    }

    pub fn n_classes(&self) -> usize {
        self.meta.n_classes()
    }

    /// Versioned little-endian blob: `"PS"`, version, `M: u16`, `C: u16`,
    /// `M` client ids as `u32`, then weights and bias as `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = self.model_order.len();
        let c = self.n_classes();
        let mut out = Vec::with_capacity(6 + 4 * m + 4 * self.meta.param_count());
        out.extend_from_slice(b"PS");
        out.push(BLOB_VERSION);
        out.push(0);
        out.extend_from_slice(&(m as u16).to_le_bytes());
        out.extend_from_slice(&(c as u16).to_le_bytes());
        for id in &self.model_order {
            out.extend_from_slice(&id.to_le_bytes());
        }
        for p in self.meta.params() {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EnsembleError> {
        if bytes.len() < 8 {
            return Err(EnsembleError::BadBlob("truncated header"));
        }
        if &bytes[..2] != b"PS" {
            return Err(EnsembleError::BadBlob("bad magic"));
        }
        if bytes[2] != BLOB_VERSION {
            return Err(EnsembleError::BadBlob("unsupported version"));
        }
        let m = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
        let c = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
        let n_params = c * m * c + c;
        if bytes.len() != 8 + 4 * m + 4 * n_params {
            return Err(EnsembleError::BadBlob("length does not match dimensions"));
        }
        let words: Vec<[u8; 4]> = bytes[8..].chunks_exact(4).map(|w| w.try_into().expect("4 bytes")).collect();
        let order = words[..m].iter().map(|w| u32::from_le_bytes(*w)).collect();
        let params: Vec<f64> = words[m..].iter().map(|w| f32::from_le_bytes(*w) as f64).collect();
        let mut meta = SoftmaxLinearModel::zeros(c, m * c);
        meta.set_params(&params)?;
        Self::new(meta, order)
    }
}

const BLOB_VERSION: u8 = 1;

/// Largest step that keeps full-batch descent monotone on this objective.
fn safe_step(features: &[Vec<f64>], reg: f64) -> f64 {
    let max_sq = features
        .iter()
        .map(|f| 1.0 + f.iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    1.0 / (0.5 * max_sq + reg)
}

pub fn train_stacking(
    a: &AlignedProbabilities,
    cfg: &StackingConfig,
) -> Result<StackingFit, EnsembleError> {
    let labels = a.labels().ok_or(EnsembleError::MissingLabels)?;
    if a.is_empty() || a.n_models() == 0 {
        return Err(EnsembleError::EmptyAlignment);
    }
    let distinct: BTreeSet<_> = labels.iter().collect();
    if distinct.len() < 2 {
        return Err(EnsembleError::SingleClass);
    }
    if !(cfg.l2 >= 0.0) || !(cfg.tol >= 0.0) {
        return Err(EnsembleError::InvalidConfig("stacking l2 and tol must be non-negative".into()));
    }
    let c = a.n_classes();
    let features = build_features(a);
    let targets: Vec<Vec<f64>> = labels
        .iter()
        .map(|&l| {
            let mut t = vec![0.0; c];
            t[l] = 1.0;
            t
        })
        .collect();
    let rows: Vec<&[f64]> = features.iter().map(|f| f.as_slice()).collect();
    let trefs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
    let reg = cfg.l2 / a.n_samples() as f64;
    let lr = safe_step(&features, reg);

    let mut meta = SoftmaxLinearModel::zeros(c, a.n_models() * c);
    let mut losses = Vec::new();
    let mut iterations = 0;
    loop {
        let (loss, grad) = meta.soft_cross_entropy(&rows, &trefs, Reduction::Mean, reg)?;
        if !loss.is_finite() {
            return Err(EnsembleError::Divergence { step: iterations });
        }
        let converged = losses.last().is_some_and(|&prev: &f64| (prev - loss).abs() < cfg.tol);
        losses.push(loss);
        if converged || iterations == cfg.max_iter {
            break;
        }
        meta.apply_gradient(&grad, lr);
        iterations += 1;
    }
    Ok(StackingFit {
        model: StackingModel::new(meta, a.model_order().to_vec())?,
        losses,
        iterations,
    })
}

pub fn predict_stacking(
    model: &StackingModel,
    a: &AlignedProbabilities,
) -> Result<Vec<ProbabilityVector>, EnsembleError> {
    if a.model_order() != model.model_order() {
        return Err(EnsembleError::OrderMismatch {
            expected: model.model_order().to_vec(),
            got: a.model_order().to_vec(),
        });
    }
    if a.n_classes() != model.n_classes() {
        return Err(EnsembleError::InconsistentC {
            expected: model.n_classes(),
            got: a.n_classes(),
        });
    }
    build_features(a)
        .iter()
        .map(|f| Ok(model.meta.predict_proba(f)?))
        .collect()
}
