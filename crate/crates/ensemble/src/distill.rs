//! KL-based distillation of client models toward ensemble soft labels.

use probfed_core::learners::{Gradient, Reduction};
use probfed_core::{LabeledSample, ProbabilityVector, SoftmaxLinearModel};

use crate::error::EnsembleError;

pub const DEFAULT_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillationConfig {
    pub kd_learning_rate: f64,
    pub kd_steps: usize,
    /// Floor applied to the local distribution before taking logs.
    pub epsilon: f64,
    pub rounds: usize,
    pub min_contributions: usize,
    /// Weight of cross-entropy on the client's private labels; 0 means pure distillation.
    pub ce_mix: f64,
}

impl Default for DistillationConfig {
    fn default() -> Self {
        Self {
            kd_learning_rate: 0.05,
            kd_steps: 10,
            epsilon: DEFAULT_EPSILON,
            rounds: 3,
            min_contributions: 2,
            ce_mix: 0.0,
        }
    }
}

impl DistillationConfig {
    pub fn validate(&self) -> Result<(), EnsembleError> {
        let bad = |m: String| Err(EnsembleError::InvalidConfig(m));
        if !(self.kd_learning_rate > 0.0) || !self.kd_learning_rate.is_finite() {
            return bad(format!("distill kd_learning_rate must be > 0, got {}", self.kd_learning_rate));
        }
        if !(self.epsilon > 0.0) || self.epsilon >= 1.0 {
            return bad(format!("distill epsilon must lie in (0, 1), got {}", self.epsilon));
        }
        if self.rounds == 0 {
            return bad("distill rounds must be >= 1".into());
        }
        if self.min_contributions == 0 {
            return bad("min_contributions must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.ce_mix) {
            return bad(format!("distill ce_mix must lie in [0, 1], got {}", self.ce_mix));
        }
        Ok(())
    }
}

/// Shared samples every client evaluates, sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    version: u32,
    sample_ids: Vec<u64>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
}

impl ReferenceSet {
    pub fn from_samples(version: u32, samples: &[LabeledSample]) -> Result<Self, EnsembleError> {
        let mut sorted: Vec<&LabeledSample> = samples.iter().collect();
        sorted.sort_by_key(|s| s.sample_id);
        if sorted.windows(2).any(|w| w[0].sample_id == w[1].sample_id) {
            return Err(EnsembleError::InvalidConfig("reference sample ids must be unique".into()));
        }
        Ok(Self {
            version,
            sample_ids: sorted.iter().map(|s| s.sample_id).collect(),
            features: sorted.iter().map(|s| s.features.clone()).collect(),
            labels: sorted.iter().map(|s| s.label).collect(),
        })
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn samples(&self) -> impl Iterator<Item = LabeledSample> + '_ {
        self.sample_ids
            .iter()
            .zip(&self.features)
            .zip(&self.labels)
            .map(|((&sample_id, f), &label)| LabeledSample {
                sample_id,
                features: f.clone(),
                label,
            })
    }
}

fn floored(q: &[f64], eps: f64) -> Vec<f64> {
    if q.iter().all(|&x| x >= eps) {
        return q.to_vec();
    }
    let raised: Vec<f64> = q.iter().map(|&x| x.max(eps)).collect();
    let s: f64 = raised.iter().sum();
    raised.into_iter().map(|x| x / s).collect()
}

/// `KL(p || q)` in nats, with `q` floored at `eps`.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> Result<f64, EnsembleError> {
    if p.len() != q.len() {
        return Err(EnsembleError::LengthMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let q = floored(q, eps);
    let kl: f64 = p
        .iter()
        .zip(&q)
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(&pc, &qc)| pc * (pc / qc).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Sum over samples of `KL(ensemble || local)`.
pub fn kd_loss(
    ensemble: &[ProbabilityVector],
    local: &[ProbabilityVector],
    eps: f64,
) -> Result<f64, EnsembleError> {
    if ensemble.len() != local.len() {
        return Err(EnsembleError::SampleMismatch);
    }
    ensemble
        .iter()
        .zip(local)
        .map(|(t, q)| kl_divergence(t, q, eps))
        .sum()
}

pub fn mean_kd(
    ensemble: &[ProbabilityVector],
    local: &[ProbabilityVector],
    eps: f64,
) -> Result<f64, EnsembleError> {
    if ensemble.is_empty() {
        return Err(EnsembleError::SampleMismatch);
    }
    Ok(kd_loss(ensemble, local, eps)? / ensemble.len() as f64)
}

fn predict_all(model: &SoftmaxLinearModel, rows: &[Vec<f64>]) -> Result<Vec<ProbabilityVector>, EnsembleError> {
    rows.iter().map(|x| Ok(model.predict_proba(x)?)).collect()
}

/// KD loss of `model` on the reference set and its gradient. The gradient
/// treats the floor as inactive, which holds whenever the model assigns at
/// least `eps` to every class.
pub fn kd_objective(
    model: &SoftmaxLinearModel,
    reference: &ReferenceSet,
    targets: &[ProbabilityVector],
    eps: f64,
) -> Result<(f64, Gradient), EnsembleError> {
    if targets.len() != reference.len() {
        return Err(EnsembleError::SampleMismatch);
    }
    let rows: Vec<&[f64]> = reference.features.iter().map(|f| f.as_slice()).collect();
    let trefs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
    let (_, grad) = model.soft_cross_entropy(&rows, &trefs, Reduction::Sum, 0.0)?;
    let local = predict_all(model, &reference.features)?;
    Ok((kd_loss(targets, &local, eps)?, grad))
}

/// `kd_steps` full-batch gradient steps on the KD loss against fixed
/// ensemble targets. Returns the updated model and the objective before
/// each step plus its final value.
pub fn client_distill_update(
    model: &SoftmaxLinearModel,
    reference: &ReferenceSet,
    target_ids: &[u64],
    targets: &[ProbabilityVector],
    private: &[LabeledSample],
    cfg: &DistillationConfig,
) -> Result<(SoftmaxLinearModel, Vec<f64>), EnsembleError> {
    cfg.validate()?;
    if target_ids != reference.sample_ids() || targets.len() != target_ids.len() {
        return Err(EnsembleError::SampleMismatch);
    }
    let mix = if private.is_empty() { 0.0 } else { cfg.ce_mix };
    let private_targets: Vec<Vec<f64>> = private
        .iter()
        .map(|s| {
            let mut t = vec![0.0; model.n_classes()];
            if let Some(slot) = t.get_mut(s.label) {
                *slot = 1.0;
            }
            t
        })
        .collect();
    let private_rows: Vec<&[f64]> = private.iter().map(|s| s.features.as_slice()).collect();
    let private_trefs: Vec<&[f64]> = private_targets.iter().map(|t| t.as_slice()).collect();

    let objective = |m: &SoftmaxLinearModel| -> Result<(f64, Gradient), EnsembleError> {
        let (kd, mut grad) = kd_objective(m, reference, targets, cfg.epsilon)?;
        if mix == 0.0 {
            return Ok((kd, grad));
        }
        let (ce, ce_grad) = m.soft_cross_entropy(&private_rows, &private_trefs, Reduction::Mean, 0.0)?;
        for g in grad.weights.iter_mut().chain(grad.bias.iter_mut()) {
            *g *= 1.0 - mix;
        }
        grad.add_scaled(&ce_grad, mix);
        Ok(((1.0 - mix) * kd + mix * ce, grad))
    };

    let mut model = model.clone();
    let mut trace = Vec::with_capacity(cfg.kd_steps + 1);
    for step in 0..=cfg.kd_steps {
        let (loss, grad) = objective(&model)?;
        if !loss.is_finite() {
            return Err(EnsembleError::Divergence { step });
        }
        trace.push(loss);
        if step < cfg.kd_steps {
            model.apply_gradient(&grad, cfg.kd_learning_rate);
        }
    }
    Ok((model, trace))
}
