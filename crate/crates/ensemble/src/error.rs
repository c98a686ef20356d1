use probfed_core::CoreError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnsembleError {
    #[error("contributions disagree on class count: {expected} vs {got}")]
    InconsistentC { expected: usize, got: usize },
    #[error("client {0} contributed more than once")]
    DuplicateClient(u32),
    #[error("no aligned samples or no models to fuse")]
    EmptyAlignment,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("stacking needs at least two distinct labels")]
    SingleClass,
    #[error("alignment has no labels")]
    MissingLabels,
    #[error("loss became non-finite at step {step}")]
    Divergence { step: usize },
    #[error("model order {got:?} does not match the fitted order {expected:?}")]
    OrderMismatch { expected: Vec<u32>, got: Vec<u32> },
    #[error("crossover cut {cut} outside [1, {m})")]
    BadCut { cut: usize, m: usize },
    #[error("fitness context is empty")]
    EmptyContext,
    #[error("targets do not cover the reference samples")]
    SampleMismatch,
    #[error("strategy `{0}` has not been fitted")]
    NotFitted(&'static str),
    #[error("unknown strategy `{name}` (known: {known})")]
    UnknownStrategy { name: String, known: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed stacking blob: {0}")]
    BadBlob(&'static str),
    #[error(transparent)]
    Core(#[from] CoreError),
}
