//! Fusion of client probability vectors: alignment, mean/weighted/stacking
//! fusion, evolutionary weight search and distillation toward the ensemble.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod distill;
pub mod error;
pub mod fitness;
pub mod fusion;
pub mod ga;
pub mod pso;
pub mod stacking;
pub mod strategy;

pub use align::{align, AlignedProbabilities};
pub use distill::{
    client_distill_update, kd_loss, kd_objective, kl_divergence, mean_kd, DistillationConfig,
    ReferenceSet, DEFAULT_EPSILON,
};
pub use error::EnsembleError;
pub use fitness::{repair, simplex_grid, FitnessContext, OptimizerOutcome, TracePoint, WeightOptimizer};
pub use fusion::{build_features, fused_accuracy, individual_accuracies, mean_fuse, split_features, weighted_fuse};
pub use ga::{ga_crossover, ga_optimize, GaConfig, GeneticOptimizer};
pub use pso::{pso_optimize, velocity_update, PsoConfig, SwarmOptimizer};
pub use stacking::{predict_stacking, train_stacking, StackingConfig, StackingFit, StackingModel};
pub use strategy::{
    FitReport, FixedWeights, FusionStrategy, MeanFusion, OptimizedWeights, Stacking, StrategyFactory,
    StrategyParams, StrategyRegistry,
};
