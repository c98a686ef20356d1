//! Fitness of weight vectors and simplex repair shared by the optimizers.

use probfed_core::{argmax_class, normalize_to_simplex, WeightVector};

use crate::align::AlignedProbabilities;
use crate::error::EnsembleError;
use crate::fusion::combine;

/// Labelled aligned probabilities; fitness is the accuracy of weighted fusion.
#[derive(Debug, Clone)]
pub struct FitnessContext {
    aligned: AlignedProbabilities,
}

impl FitnessContext {
    pub fn new(aligned: AlignedProbabilities) -> Result<Self, EnsembleError> {
        if aligned.labels().is_none() {
            return Err(EnsembleError::MissingLabels);
        }
        if aligned.is_empty() || aligned.n_models() == 0 {
            return Err(EnsembleError::EmptyContext);
        }
        Ok(Self { aligned })
    }

    pub fn aligned(&self) -> &AlignedProbabilities {
        &self.aligned
    }

    pub fn n_models(&self) -> usize {
        self.aligned.n_models()
    }

    pub fn fitness(&self, w: &[f64]) -> f64 {
        let labels = self.aligned.labels().expect("checked at construction");
        let mut buf = vec![0.0; self.aligned.n_classes()];
        let mut hits = 0usize;
        for (row, &label) in self.aligned.rows().iter().zip(labels) {
            combine(row, w, &mut buf);
            // Same normalization as weighted fusion so ties resolve identically.
            let s: f64 = buf.iter().sum();
            if s > 0.0 {
                buf.iter_mut().for_each(|x| *x /= s);
            }
            if argmax_class(&buf) == label {
                hits += 1;
            }
        }
        hits as f64 / labels.len() as f64
    }
}

/// Clips negatives to zero and renormalizes; all-zero or non-finite input
/// becomes uniform.
pub fn repair(raw: &[f64]) -> WeightVector {
    let clipped: Vec<f64> = raw
        .iter()
        .map(|&x| if x.is_finite() && x > 0.0 { x } else { 0.0 })
        .collect();
    match normalize_to_simplex(&clipped) {
        Ok(v) => WeightVector::new(v).unwrap_or_else(|_| WeightVector::uniform(raw.len())),
        Err(_) => WeightVector::uniform(raw.len()),
    }
}

/// Every point of the `m`-simplex whose coordinates are multiples of `1/steps`.
pub fn simplex_grid(m: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(m: usize, left: usize, steps: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == m - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / steps as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(m, left - k, steps, cur, out);
            cur.pop();
        }
    }
    assert!(m >= 1 && steps >= 1);
    let mut out = Vec::new();
    rec(m, steps, steps, &mut Vec::with_capacity(m), &mut out);
    out
}

/// One point of an optimizer trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerOutcome {
    pub weights: WeightVector,
    pub fitness: f64,
    pub trace: Vec<TracePoint>,
}

/// Searches the weight simplex for the fittest combination.
pub trait WeightOptimizer: Send + Sync {
    fn name(&self) -> &'static str;
    fn optimize(&self, ctx: &FitnessContext) -> Result<OptimizerOutcome, EnsembleError>;
}
