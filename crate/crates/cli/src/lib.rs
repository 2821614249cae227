//! Experiment runner for the synthetic partial multi-graph matching
//! benchmark: dataset generation, training, evaluation and sweeps.

pub mod commands;
pub mod config;
pub mod experiment;

use thiserror::Error;
use univmatch::assignment::AssignmentError;
use univmatch::diff::DiffError;
use univmatch::matching::MatchingError;
use univmatch::model::ModelError;
use univmatch::synth::{ConfigError, DatasetIoError, MetricError};

pub use commands::{cmd_eval, cmd_gen, cmd_sweep, cmd_train, ResultRow, SweepAxis, SWEEP_HEADER};
pub use config::{EvalConfig, EvalMode, ExperimentConfig};
pub use experiment::{evaluate, model_for, train_model, EvalReport, Method, TrainOutcome};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    /// Process exit status.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Io(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<DiffError> for CliError {
    fn from(e: DiffError) -> Self {
        match e {
            DiffError::NonFinite(_) => Self::Numeric(e.to_string()),
            DiffError::Io(_) | DiffError::Checkpoint(_) => Self::Io(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<AssignmentError> for CliError {
    fn from(e: AssignmentError) -> Self {
        match e {
            AssignmentError::NonFinite { .. } => Self::Numeric(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Diff(d) => d.into(),
            ModelError::Assignment(a) => a.into(),
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<MatchingError> for CliError {
    fn from(e: MatchingError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::Validation(e.to_string())
    }
}

impl From<DatasetIoError> for CliError {
    fn from(e: DatasetIoError) -> Self {
        Self::Io(e.to_string())
    }
}
