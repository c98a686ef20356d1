//! Scenario-driven simulation of probability-level federated ensembling:
//! config loading, client fleet, coordinator, run driver and reports.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod coordinator;
pub mod error;
pub mod fleet;
pub mod report;
pub mod runner;
pub mod scenarios;

pub use config::{echo, load_scenario, parse_scenario, ClientKind, ClientSpec, ConfigError, ScenarioConfig};
pub use coordinator::{collect_round, CollectPolicy, Coordinator, FedAvgServer, RoundState, RoundStatus};
pub use error::SimError;
pub use fleet::{build_fleet, partition_train, ClientLearner};
pub use report::{
    compare_paradigms, cross_check_bytes, replay_check, ComparisonRow, Difference, Paradigm, ParadigmReport,
    RoundRecord,
};
pub use runner::{run, run_to_dir, FitOutcome, RunOutput, World};
