use thiserror::Error;

use ehrseq_core::eval::EvalError;
use ehrseq_core::model::ModelError;

/// Failures grouped by the exit code a script sees.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or missing input (exit 2).
    #[error("input error: {0}")]
    Input(String),
    /// Fewer than the minimum number of accepted patients (exit 3).
    #[error("cohort too small: {accepted} accepted patients, need at least {min}")]
    CohortTooSmall { accepted: usize, min: usize },
    /// Training failed, including divergence (exit 4).
    #[error("training failed: {0}")]
    Training(String),
    /// Checkpoint and run config disagree (exit 5).
    #[error("artifact mismatch: {0}")]
    ArtifactMismatch(String),
    /// Reports cannot be compared (exit 6).
    #[error("comparison failed: {0}")]
    Comparison(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::CohortTooSmall { .. } => 3,
            CliError::Training(_) => 4,
            CliError::ArtifactMismatch(_) => 5,
            CliError::Comparison(_) => 6,
            CliError::Io(_) => 1,
        }
    }

    pub(crate) fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(e) => CliError::Io(e),
            ModelError::Checkpoint(m) => CliError::Input(format!("checkpoint: {m}")),
            other => CliError::Training(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Mismatch(m) => CliError::Comparison(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(format!("json: {e}"))
    }
}
