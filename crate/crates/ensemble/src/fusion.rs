//! Mean and weighted fusion, and stacking feature construction.

use probfed_core::{argmax_class, normalize_to_simplex, ProbabilityVector, WeightVector};

use crate::align::AlignedProbabilities;
use crate::error::EnsembleError;

/// `sum_m w_m p_m`, renormalized.
pub(crate) fn combine(row: &[ProbabilityVector], w: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (p, &wm) in row.iter().zip(w) {
        if wm != 0.0 {
            for (o, x) in out.iter_mut().zip(p.iter()) {
                *o += wm * x;
            }
        }
    }
}

fn finish(raw: &[f64]) -> ProbabilityVector {
    match normalize_to_simplex(raw) {
        Ok(v) => ProbabilityVector::new(v).unwrap_or_else(|_| ProbabilityVector::uniform(raw.len())),
        Err(_) => ProbabilityVector::uniform(raw.len()),
    }
}

pub fn mean_fuse(a: &AlignedProbabilities) -> Result<Vec<ProbabilityVector>, EnsembleError> {
    if a.n_models() == 0 {
        return Err(EnsembleError::EmptyAlignment);
    }
    weighted_fuse(a, &WeightVector::uniform(a.n_models()))
}

pub fn weighted_fuse(
    a: &AlignedProbabilities,
    w: &WeightVector,
) -> Result<Vec<ProbabilityVector>, EnsembleError> {
    if a.n_models() == 0 {
        return Err(EnsembleError::EmptyAlignment);
    }
    if w.len() != a.n_models() {
        return Err(EnsembleError::LengthMismatch {
            expected: a.n_models(),
            got: w.len(),
        });
    }
    let mut buf = vec![0.0; a.n_classes()];
    Ok(a.rows()
        .iter()
        .map(|row| {
            combine(row, w, &mut buf);
            finish(&buf)
        })
        .collect())
}

/// Accuracy of per-sample argmax predictions against the alignment's labels.
pub fn fused_accuracy(
    a: &AlignedProbabilities,
    fused: &[ProbabilityVector],
) -> Result<f64, EnsembleError> {
    let labels = a.labels().ok_or(EnsembleError::MissingLabels)?;
    let preds: Vec<usize> = fused.iter().map(|p| p.argmax()).collect();
    Ok(probfed_core::accuracy(&preds, labels)?)
}

/// Accuracy of each model on its own, in model order.
pub fn individual_accuracies(a: &AlignedProbabilities) -> Result<Vec<f64>, EnsembleError> {
    let labels = a.labels().ok_or(EnsembleError::MissingLabels)?;
    (0..a.n_models())
        .map(|m| {
            let preds: Vec<usize> = a.rows().iter().map(|r| argmax_class(&r[m])).collect();
            Ok(probfed_core::accuracy(&preds, labels)?)
        })
        .collect()
}

/// Concatenates each sample's vectors in model order into one row of length `M * C`.
pub fn build_features(a: &AlignedProbabilities) -> Vec<Vec<f64>> {
    a.rows()
        .iter()
        .map(|row| row.iter().flat_map(|p| p.iter().copied()).collect())
        .collect()
}

/// Splits feature rows back into per-model distributions.
pub fn split_features(
    features: &[Vec<f64>],
    n_models: usize,
    n_classes: usize,
) -> Result<Vec<Vec<ProbabilityVector>>, EnsembleError> {
    features
        .iter()
        .map(|f| {
            if f.len() != n_models * n_classes {
                return Err(EnsembleError::LengthMismatch {
                    expected: n_models * n_classes,
                    got: f.len(),
                });
            }
            f.chunks(n_classes)
                .map(|block| Ok(ProbabilityVector::new(block.to_vec())?))
                .collect()
        })
        .collect()
}
