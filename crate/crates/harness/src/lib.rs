//! Pipeline orchestration for the `locnet` command: simulation, path
//! extraction, training, calibration, localization and evaluation, with
//! versioned on-disk artifacts between the stages.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod eval;
pub mod pipeline;
pub mod scenario;

use locnet_core::anodet::AdError;
use locnet_core::locate::LocateError;
use locnet_core::losest::LosError;
use locnet_core::nn::NnError;
use locnet_core::sim::SimError;
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing artifact {path}: run `locnet {producer}` first")]
    MissingArtifact { path: String, producer: &'static str },
    #[error("incompatible artifact {path}: {reason}; rerun `locnet {producer}`")]
    IncompatibleArtifact { path: String, reason: String, producer: &'static str },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io { .. } | HarnessError::Sim(_) => 2,
            HarnessError::MissingArtifact { .. } | HarnessError::IncompatibleArtifact { .. } => 3,
            HarnessError::Numerical(_) => 4,
        }
    }
}

impl From<LosError> for HarnessError {
    fn from(e: LosError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}

impl From<NnError> for HarnessError {
    fn from(e: NnError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}

impl From<AdError> for HarnessError {
    fn from(e: AdError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}

impl From<LocateError> for HarnessError {
    fn from(e: LocateError) -> Self {
        HarnessError::Numerical(e.to_string())
    }
}
