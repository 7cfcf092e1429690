use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the purification lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("finite-difference oracle produced a non-finite value at component {component}")]
    OracleFailure { component: usize },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    TrainingDiverged { iteration: usize, loss: f64 },

    #[error("purification diverged at step {step}")]
    PurificationDiverged { step: usize },

    #[error("attack aborted at iteration {iteration}: gradient oracle returned a non-finite value")]
    AttackAborted { iteration: usize },

    #[error("sample {index}: {source}")]
    Sample {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn at_sample(self, index: usize) -> Self {
        Error::Sample {
            index,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag, used by the CLI's error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::OracleFailure { .. } => "oracle_failure",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::PurificationDiverged { .. } => "purification_diverged",
            Error::AttackAborted { .. } => "attack_aborted",
            Error::Sample { source, .. } => source.kind(),
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
