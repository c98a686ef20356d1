//! Client-side base learners.
//!
//! [`SyntheticClassifier`] emits distributions from a fixed confusion
//! profile, which makes ensemble experiments fully controllable.
//! [`SoftmaxLinearModel`] is a multinomial logistic regression trained by
//! full-batch gradient descent; it is the learner used for distillation and
//! for the parameter-averaging baseline.

use crate::dataset::LabeledSample;
use crate::error::CoreError;
use crate::rng::{derive_seed, dirichlet, seeded};
use crate::simplex::ProbabilityVector;

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradient {
    pub fn is_zero(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|g| *g == 0.0)
    }

    pub fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += scale * b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += scale * b;
        }
    }
}

/// Multinomial logistic regression, `logits = W x + b`.
///
/// Weights are stored row-major as `n_classes x n_features`; the flat
/// parameter vector is the weights followed by the bias, so the parameter
/// count is `C * D + C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxLinearModel {
    n_classes: usize,
    n_features: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl SoftmaxLinearModel {
    pub fn zeros(n_classes: usize, n_features: usize) -> Self {
        Self {
            n_classes,
            n_features,
            weights: vec![0.0; n_classes * n_features],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn from_parts(
        n_classes: usize,
        n_features: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, CoreError> {
        if n_classes < 2 {
            return Err(CoreError::TooFewClasses(n_classes));
        }
        if weights.len() != n_classes * n_features || bias.len() != n_classes {
            return Err(CoreError::ShapeMismatch);
        }
        if !weights.iter().chain(&bias).all(|x| x.is_finite()) {
            return Err(CoreError::InvalidModel("non-finite parameter".into()));
        }
        Ok(Self {
            n_classes,
            n_features,
            weights,
            bias,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn param_count(&self) -> usize {
        self.n_classes * self.n_features + self.n_classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), CoreError> {
        if params.len() != self.param_count() {
            return Err(CoreError::ShapeMismatch);
        }
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_classes == other.n_classes && self.n_features == other.n_features
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>, CoreError> {
        if x.len() != self.n_features {
            return Err(CoreError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok((0..self.n_classes)
            .map(|c| {
                let row = &self.weights[c * self.n_features..(c + 1) * self.n_features];
                self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect())
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<ProbabilityVector, CoreError> {
        let p = softmax(&self.logits(x)?);
        ProbabilityVector::from_unnormalized(&p)
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.weights.iter().chain(&self.bias).map(|w| w * w).sum()
    }

    /// Cross-entropy against soft targets plus `(l2 / 2) * ||theta||^2`,
    /// with its gradient. Targets are expected to be distributions.
    pub fn soft_cross_entropy(
        &self,
        rows: &[&[f64]],
        targets: &[&[f64]],
        reduction: Reduction,
        l2: f64,
    ) -> Result<(f64, Gradient), CoreError> {
        if rows.len() != targets.len() {
            return Err(CoreError::LengthMismatch {
                left: rows.len(),
                right: targets.len(),
            });
        }
        if rows.is_empty() {
            return Err(CoreError::Empty);
        }
        let (c_n, d_n) = (self.n_classes, self.n_features);
        let mut grad = Gradient {
            weights: vec![0.0; c_n * d_n],
            bias: vec![0.0; c_n],
        };
        let mut loss = 0.0;
        for (x, t) in rows.iter().zip(targets) {
            if t.len() != c_n {
                return Err(CoreError::LengthMismatch {
                    left: t.len(),
                    right: c_n,
                });
            }
            let z = self.logits(x)?;
            let lse = log_sum_exp(&z);
            let t_sum: f64 = t.iter().sum();
            for c in 0..c_n {
                if t[c] > 0.0 {
                    loss -= t[c] * (z[c] - lse);
                }
                let dz = (z[c] - lse).exp() * t_sum - t[c];
                if dz != 0.0 {
                    grad.bias[c] += dz;
                    let g_row = &mut grad.weights[c * d_n..(c + 1) * d_n];
                    for (g, v) in g_row.iter_mut().zip(x.iter()) {
                        *g += dz * v;
                    }
                }
            }
        }
        if reduction == Reduction::Mean {
            let n = rows.len() as f64;
            loss /= n;
            for g in grad.weights.iter_mut().chain(grad.bias.iter_mut()) {
                *g /= n;
            }
        }
        if l2 != 0.0 {
            loss += 0.5 * l2 * self.l2_norm_sq();
            for (g, w) in grad.weights.iter_mut().zip(&self.weights) {
                *g += l2 * w;
            }
            for (g, b) in grad.bias.iter_mut().zip(&self.bias) {
                *g += l2 * b;
            }
        }
        Ok((loss, grad))
    }

    pub fn apply_gradient(&mut self, grad: &Gradient, lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.1,
            l2: 1e-3,
        }
    }
}

fn one_hot_targets(data: &[LabeledSample], n_classes: usize) -> Result<Vec<Vec<f64>>, CoreError> {
    data.iter()
        .map(|s| {
            if s.label >= n_classes {
                return Err(CoreError::LabelOutOfRange {
                    label: s.label,
                    n_classes,
                });
            }
            let mut t = vec![0.0; n_classes];
            t[s.label] = 1.0;
            Ok(t)
        })
        .collect()
}

/// Full-batch gradient descent on mean cross-entropy + (l2/2)||theta||^2.
///
/// The trace holds the objective before each epoch plus the final value,
/// so it has `epochs + 1` entries.
pub fn train_local(
    model: &SoftmaxLinearModel,
    data: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<(SoftmaxLinearModel, Vec<f64>), CoreError> {
    if data.is_empty() {
        return Err(CoreError::Empty);
    }
    if !(cfg.lr > 0.0) {
        return Err(CoreError::InvalidModel(format!("learning rate must be > 0, got {}", cfg.lr)));
    }
    let targets = one_hot_targets(data, model.n_classes())?;
    let rows: Vec<&[f64]> = data.iter().map(|s| s.features.as_slice()).collect();
    let target_refs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
    let mut model = model.clone();
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let (loss, grad) =
            model.soft_cross_entropy(&rows, &target_refs, Reduction::Mean, cfg.l2)?;
        if !loss.is_finite() {
            return Err(CoreError::Divergence { step: epoch });
        }
        trace.push(loss);
        if epoch < cfg.epochs {
            model.apply_gradient(&grad, cfg.lr);
        }
    }
    Ok((model, trace))
}

/// Element-wise mean of the parameters of identically shaped models.
pub fn fedavg_aggregate(models: &[SoftmaxLinearModel]) -> Result<SoftmaxLinearModel, CoreError> {
    let first = models.first().ok_or(CoreError::Empty)?;
    if models.iter().any(|m| !m.same_shape(first)) {
        return Err(CoreError::ShapeMismatch);
    }
    let n = models.len() as f64;
    let mut params = vec![0.0; first.param_count()];
    for m in models {
        for (acc, p) in params.iter_mut().zip(m.params()) {
            *acc += p;
        }
    }
    for p in &mut params {
        *p /= n;
    }
    let mut out = first.clone();
    out.set_params(&params)?;
    Ok(out)
}

/// Dirichlet sharpness of a synthetic classifier's outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Concentration {
    /// Always emit the profile row itself.
    Infinite,
    Finite(f64),
}

/// Emits distributions drawn around a per-true-class profile row.
///
/// Draws are seeded per `(rng_seed, sample_id)`, so a sample always gets
/// the same answer no matter when or how often it is asked.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClassifier {
    rows: Vec<ProbabilityVector>,
    concentration: Concentration,
    rng_seed: u64,
}

impl SyntheticClassifier {
    pub fn new(
        rows: Vec<ProbabilityVector>,
        concentration: Concentration,
        rng_seed: u64,
    ) -> Result<Self, CoreError> {
        let c = rows.len();
        if c < 2 {
            return Err(CoreError::TooFewClasses(c));
        }
        if let Some(row) = rows.iter().find(|r| r.n_classes() != c) {
            return Err(CoreError::LengthMismatch {
                left: row.n_classes(),
                right: c,
            });
        }
        if let Concentration::Finite(k) = concentration {
            if !(k > 0.0) || !k.is_finite() {
                return Err(CoreError::InvalidModel(format!(
                    "concentration must be positive, got {k}"
                )));
            }
        }
        Ok(Self {
            rows,
            concentration,
            rng_seed,
        })
    }

    /// Rows for `classes` put `confidence` on the true class and spread the
    /// rest evenly; every other row is uniform.
    pub fn diagonal_rows(
        n_classes: usize,
        confidence: f64,
        classes: &[usize],
    ) -> Result<Vec<ProbabilityVector>, CoreError> {
        if n_classes < 2 {
            return Err(CoreError::TooFewClasses(n_classes));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(CoreError::InvalidModel(format!(
                "confidence must lie in [0, 1], got {confidence}"
            )));
        }
        if let Some(&label) = classes.iter().find(|&&c| c >= n_classes) {
            return Err(CoreError::LabelOutOfRange { label, n_classes });
        }
        let off = (1.0 - confidence) / (n_classes - 1) as f64;
        Ok((0..n_classes)
            .map(|t| {
                if classes.contains(&t) {
                    let mut row = vec![off; n_classes];
                    row[t] = confidence;
                    ProbabilityVector::from_unnormalized(&row).expect("valid row")
                } else {
                    ProbabilityVector::uniform(n_classes)
                }
            })
            .collect())
    }

    pub fn n_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[ProbabilityVector] {
        &self.rows
    }

    pub fn concentration(&self) -> Concentration {
        self.concentration
    }

    pub fn predict(&self, sample: &LabeledSample) -> Result<ProbabilityVector, CoreError> {
        let row = self.rows.get(sample.label).ok_or(CoreError::LabelOutOfRange {
            label: sample.label,
            n_classes: self.rows.len(),
        })?;
        match self.concentration {
            Concentration::Infinite => Ok(row.clone()),
            Concentration::Finite(k) => {
                let mut rng = seeded(derive_seed(self.rng_seed, sample.sample_id));
                let alphas: Vec<f64> = row.iter().map(|p| k * p).collect();
                match dirichlet(&mut rng, &alphas) {
                    Some(draw) => ProbabilityVector::from_unnormalized(&draw),
                    None => Ok(row.clone()),
                }
            }
        }
    }
}
