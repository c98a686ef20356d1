//! Per-sample alignment of client contributions.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use probfed_core::ProbabilityVector;
use probfed_transport::ContributionMessage;

use crate::error::EnsembleError;

/// Probabilities of `M` models on a common set of samples.
///
/// `rows[i][m]` is model `model_order[m]`'s distribution for `sample_ids[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedProbabilities {
    model_order: Vec<u32>,
    n_classes: usize,
    sample_ids: Vec<u64>,
    rows: Vec<Vec<ProbabilityVector>>,
    labels: Option<Vec<usize>>,
    dropped: usize,
}

impl AlignedProbabilities {
    pub fn new(
        model_order: Vec<u32>,
        n_classes: usize,
        sample_ids: Vec<u64>,
        rows: Vec<Vec<ProbabilityVector>>,
    ) -> Result<Self, EnsembleError> {
        let mut seen = BTreeSet::new();
        for &id in &model_order {
            if !seen.insert(id) {
                return Err(EnsembleError::DuplicateClient(id));
            }
        }
        if sample_ids.len() != rows.len() {
            return Err(EnsembleError::LengthMismatch {
                expected: sample_ids.len(),
                got: rows.len(),
            });
        }
        for row in &rows {
            if row.len() != model_order.len() {
                return Err(EnsembleError::LengthMismatch {
                    expected: model_order.len(),
                    got: row.len(),
                });
            }
            if let Some(p) = row.iter().find(|p| p.n_classes() != n_classes) {
                return Err(EnsembleError::InconsistentC {
                    expected: n_classes,
                    got: p.n_classes(),
                });
            }
        }
        Ok(Self {
            model_order,
            n_classes,
            sample_ids,
            rows,
            labels: None,
            dropped: 0,
        })
    }

    pub fn with_labels(mut self, labels: Vec<usize>) -> Result<Self, EnsembleError> {
        if labels.len() != self.rows.len() {
            return Err(EnsembleError::LengthMismatch {
                expected: self.rows.len(),
                got: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= self.n_classes) {
            return Err(probfed_core::CoreError::LabelOutOfRange {
                label,
                n_classes: self.n_classes,
            }
            .into());
        }
        self.labels = Some(labels);
        Ok(self)
    }

    /// Attaches labels by sample id; samples without a label are removed.
    pub fn label_by_id(self, labels: &HashMap<u64, usize>) -> Result<Self, EnsembleError> {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        let mut ls = Vec::new();
        for (id, row) in self.sample_ids.into_iter().zip(self.rows) {
            if let Some(&l) = labels.get(&id) {
                ids.push(id);
                rows.push(row);
                ls.push(l);
            }
        }
        let dropped = self.dropped;
        let mut out = Self::new(self.model_order, self.n_classes, ids, rows)?.with_labels(ls)?;
        out.dropped = dropped;
        Ok(out)
    }

    pub fn model_order(&self) -> &[u32] {
        &self.model_order
    }

    pub fn n_models(&self) -> usize {
        self.model_order.len()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn rows(&self) -> &[Vec<ProbabilityVector>] {
        &self.rows
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Samples seen by some but not all models.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    /// Column `m` of the alignment: one model's vectors in sample order.
    pub fn model_column(&self, m: usize) -> Vec<&ProbabilityVector> {
        self.rows.iter().map(|r| &r[m]).collect()
    }

    /// Re-expresses the alignment in `order`. Models absent from `self`
    /// are filled with the uniform distribution.
    pub fn reorder_with_fill(&self, order: &[u32]) -> Self {
        let pos: HashMap<u32, usize> =
            self.model_order.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let uniform = ProbabilityVector::uniform(self.n_classes);
        let rows = self
            .rows
            .iter()
            .map(|row| {
                order
                    .iter()
                    .map(|id| pos.get(id).map_or_else(|| uniform.clone(), |&i| row[i].clone()))
                    .collect()
            })
            .collect();
        Self {
            model_order: order.to_vec(),
            n_classes: self.n_classes,
            sample_ids: self.sample_ids.clone(),
            rows,
            labels: self.labels.clone(),
            dropped: self.dropped,
        }
    }
}

/// Inner join of contributions on `sample_id`, models ordered by client id.
pub fn align(contributions: &[&ContributionMessage]) -> Result<AlignedProbabilities, EnsembleError> {
    let mut by_client: BTreeMap<u32, &ContributionMessage> = BTreeMap::new();
    let mut n_classes = None;
    for c in contributions {
        match n_classes {
            None => n_classes = Some(c.n_classes()),
            Some(expected) if expected != c.n_classes() => {
                return Err(EnsembleError::InconsistentC {
                    expected,
                    got: c.n_classes(),
                })
            }
            _ => {}
        }
        if by_client.insert(c.client_id(), c).is_some() {
            return Err(EnsembleError::DuplicateClient(c.client_id()));
        }
    }
    let n_classes = n_classes.ok_or(EnsembleError::EmptyAlignment)?;
    let model_order: Vec<u32> = by_client.keys().copied().collect();
    let maps: Vec<HashMap<u64, &ProbabilityVector>> = by_client
        .values()
        .map(|c| c.entries().iter().map(|e| (e.sample_id, &e.probs)).collect())
        .collect();

    let mut union = BTreeSet::new();
    for c in by_client.values() {
        union.extend(c.entries().iter().map(|e| e.sample_id));
    }
    let mut sample_ids = Vec::new();
    let mut rows = Vec::new();
    for id in &union {
        if maps.iter().all(|m| m.contains_key(id)) {
            sample_ids.push(*id);
            rows.push(maps.iter().map(|m| (*m[id]).clone()).collect());
        }
    }
    let dropped = union.len() - sample_ids.len();
    let mut out = AlignedProbabilities::new(model_order, n_classes, sample_ids, rows)?;
    out.dropped = dropped;
    Ok(out)
}
