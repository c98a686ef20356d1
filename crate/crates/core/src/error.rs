use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("cannot normalize an all-zero vector")]
    AllZero,
    #[error("vector is not on the simplex (sum {sum}, tolerance {tol})")]
    NotSimplex { sum: f64, tol: f64 },
    #[error("entry {index} is negative or non-finite: {value}")]
    InvalidEntry { index: usize, value: f64 },
    #[error("a probability vector needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("confusion matrix has no samples")]
    EmptyMatrix,
    #[error("class index {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model shapes differ")]
    ShapeMismatch,
    #[error("loss became non-finite at step {step}")]
    Divergence { step: usize },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}
