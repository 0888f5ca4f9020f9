use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator, the learners and the experiment plumbing.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("delay {value} for household {household} appliance {appliance} outside [0, {max}]")]
    ActionOutOfRange {
        household: usize,
        appliance: usize,
        value: f64,
        max: f64,
    },

    #[error("episode finished; call reset before stepping again")]
    EpisodeFinished,

    #[error("index {index} out of range for {len} {what}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("infeasible scheduling problem: {0}")]
    Infeasible(String),

    #[error("solver did not converge: residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error("non-finite loss at iteration {iteration} ({stage})")]
    Diverged { iteration: usize, stage: String },

    #[error("schema mismatch in {path}: {detail}")]
    Schema { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("malformed checkpoint {path}: {detail}")]
    Checkpoint { path: PathBuf, detail: String },
}

impl GridError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GridError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        GridError::Csv {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by user input rather than by a run going wrong.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            GridError::Config(_) | GridError::Infeasible(_) | GridError::Schema { .. }
        )
    }
}

pub type Result<T, E = GridError> = std::result::Result<T, E>;
