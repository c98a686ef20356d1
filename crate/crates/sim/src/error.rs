use probfed_core::CoreError;
use probfed_ensemble::EnsembleError;
use probfed_transport::{BrokerError, WireError};
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("contribution for round {got} arrived during round {current}")]
    FutureRound { got: u32, current: u32 },
    #[error("round {round}: {got} contribution(s) within the wait budget, need {need}")]
    InsufficientContributions { round: u32, got: usize, need: usize },
    #[error("round {round} is not eligible for aggregation")]
    NotEligible { round: u32 },
    #[error("parameter vectors differ in shape")]
    ShapeMismatch,
    #[error("reports come from different scenarios: {0}")]
    ScenarioMismatch(String),
    #[error("missing artifact {0}")]
    MissingArtifact(String),
    #[error("byte cross-check failed: {0}")]
    BytesMismatch(String),
    #[error("client {client} got no ensemble broadcast for round {round}")]
    MissingBroadcast { client: u32, round: u32 },
}

impl SimError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
