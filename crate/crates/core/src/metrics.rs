//! Classification metrics.

use crate::error::CoreError;

/// Fraction of positions where `preds[i] == labels[i]`.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64, CoreError> {
    if preds.len() != labels.len() {
        return Err(CoreError::LengthMismatch {
            left: preds.len(),
            right: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(CoreError::Empty);
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Row = true class, column = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self, CoreError> {
        let n = rows.len();
        let mut cm = Self::new(n);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(CoreError::LengthMismatch {
                    left: row.len(),
                    right: n,
                });
            }
            cm.counts[t * n..(t + 1) * n].copy_from_slice(row);
        }
        Ok(cm)
    }

    pub fn from_predictions(
        preds: &[usize],
        labels: &[usize],
        n_classes: usize,
    ) -> Result<Self, CoreError> {
        if preds.len() != labels.len() {
            return Err(CoreError::LengthMismatch {
                left: preds.len(),
                right: labels.len(),
            });
        }
        let mut cm = Self::new(n_classes);
        for (&p, &t) in preds.iter().zip(labels) {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, pred: usize) -> Result<(), CoreError> {
        for label in [truth, pred] {
            if label >= self.n_classes {
                return Err(CoreError::LabelOutOfRange {
                    label,
                    n_classes: self.n_classes,
                });
            }
        }
        self.counts[truth * self.n_classes + pred] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(class, p)).sum()
    }

    pub fn accuracy(&self) -> Result<f64, CoreError> {
        let total = self.total();
        if total == 0 {
            return Err(CoreError::EmptyMatrix);
        }
        let diag: u64 = (0..self.n_classes).map(|c| self.get(c, c)).sum();
        Ok(diag as f64 / total as f64)
    }

    /// Per-class F1; a class with precision + recall = 0 scores 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let tp = self.get(c, c) as f64;
                let predicted: u64 = (0..self.n_classes).map(|t| self.get(t, c)).sum();
                let actual = self.support(c);
                let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
                let recall = if actual == 0 { 0.0 } else { tp / actual as f64 };
                if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                }
            })
            .collect()
    }

    pub fn macro_f1(&self) -> Result<f64, CoreError> {
        if self.total() == 0 {
            return Err(CoreError::EmptyMatrix);
        }
        let f1 = self.per_class_f1();
        Ok(f1.iter().sum::<f64>() / f1.len() as f64)
    }

    /// Support-weighted mean of per-class F1.
    pub fn weighted_f1(&self) -> Result<f64, CoreError> {
        let total = self.total();
        if total == 0 {
            return Err(CoreError::EmptyMatrix);
        }
        let f1 = self.per_class_f1();
        Ok(f1
            .iter()
            .enumerate()
            .map(|(c, f)| f * self.support(c) as f64)
            .sum::<f64>()
            / total as f64)
    }
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, CoreError> {
    cm.macro_f1()
}
