//! Points on the probability simplex.
//!
//! Two newtypes share the same invariant (non-negative, sums to one within
//! [`SIMPLEX_TOL`]): [`ProbabilityVector`] is a class distribution over `C`
//! classes and [`WeightVector`] is a set of combination weights over `M`
//! models. Constructors validate; arithmetic that can drift goes back
//! through [`normalize_to_simplex`].

use std::ops::Deref;

use crate::error::CoreError;

/// Validation tolerance for every simplex produced inside the workspace.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// True iff `v` is non-empty, every entry is finite and non-negative, and
/// the entries sum to one within `tol`.
pub fn validate_simplex(v: &[f64], tol: f64) -> bool {
    if v.is_empty() {
        return false;
    }
    if !v.iter().all(|x| x.is_finite() && *x >= 0.0) {
        return false;
    }
    (v.iter().sum::<f64>() - 1.0).abs() <= tol
}

/// Scales a non-negative vector so that it sums to one.
///
/// An all-zero input is an error; callers that want a fallback substitute
/// the uniform vector themselves.
pub fn normalize_to_simplex(v: &[f64]) -> Result<Vec<f64>, CoreError> {
    if v.is_empty() {
        return Err(CoreError::Empty);
    }
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(CoreError::InvalidEntry { index, value });
        }
    }
    let sum: f64 = v.iter().sum();
    if sum == 0.0 {
        return Err(CoreError::AllZero);
    }
    Ok(v.iter().map(|x| x / sum).collect())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_class(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate().skip(1) {
        if x > p[best] {
            best = i;
        }
    }
    best
}

fn check_simplex(v: &[f64]) -> Result<(), CoreError> {
    if v.is_empty() {
        return Err(CoreError::Empty);
    }
    for (index, &value) in v.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(CoreError::InvalidEntry { index, value });
        }
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(CoreError::NotSimplex {
            sum,
            tol: SIMPLEX_TOL,
        });
    }
    Ok(())
}

/// Class distribution over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self, CoreError> {
        if probs.len() < 2 {
            return Err(CoreError::TooFewClasses(probs.len()));
        }
        check_simplex(&probs)?;
        Ok(Self(probs))
    }

    /// Normalizes non-negative scores into a distribution.
    pub fn from_unnormalized(scores: &[f64]) -> Result<Self, CoreError> {
        if scores.len() < 2 {
            return Err(CoreError::TooFewClasses(scores.len()));
        }
        Ok(Self(normalize_to_simplex(scores)?))
    }

    pub fn uniform(n_classes: usize) -> Self {
        assert!(n_classes >= 2, "a distribution needs at least 2 classes");
        Self(vec![1.0 / n_classes as f64; n_classes])
    }

    pub fn one_hot(n_classes: usize, class: usize) -> Self {
        assert!(n_classes >= 2 && class < n_classes);
        let mut v = vec![0.0; n_classes];
        v[class] = 1.0;
        Self(v)
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        argmax_class(&self.0)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ProbabilityVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Combination weights over `M >= 1` models.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self, CoreError> {
        check_simplex(&weights)?;
        Ok(Self(weights))
    }

    pub fn from_unnormalized(scores: &[f64]) -> Result<Self, CoreError> {
        Ok(Self(normalize_to_simplex(scores)?))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n >= 1);
        Self(vec![1.0 / n as f64; n])
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        assert!(k < n);
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        Self(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for WeightVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}
