//! Shared building blocks for probability-level federated ensembling.
//!
//! This crate holds the value types every other crate exchanges
//! ([`ProbabilityVector`], [`WeightVector`], [`LabeledSample`]), the
//! classification metrics used for fitness and reporting, the client-side
//! base learners, and a seeded synthetic dataset generator.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod learners;
pub mod metrics;
pub mod rng;
pub mod simplex;

pub use dataset::{generate_dataset, Dataset, DatasetSpec, LabeledSample};
pub use error::CoreError;
pub use learners::{
    fedavg_aggregate, softmax, train_local, Concentration, SoftmaxLinearModel,
    SyntheticClassifier, TrainConfig,
};
pub use metrics::{accuracy, macro_f1, ConfusionMatrix};
pub use simplex::{
    argmax_class, normalize_to_simplex, validate_simplex, ProbabilityVector, WeightVector,
    SIMPLEX_TOL,
};
