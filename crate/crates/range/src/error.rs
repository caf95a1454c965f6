use std::path::PathBuf;

use interlock_core::{PerceptionError, SimError};

#[derive(Debug, thiserror::Error)]
pub enum RangeError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("controller conformance failed: {0}")]
    Conformance(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error("internal error: {0}")]
    Internal(String),
}

impl RangeError {
    pub(crate) fn parse(context: impl Into<String>, message: impl ToString) -> Self {
        RangeError::Parse { context: context.into(), message: message.to_string() }
    }

    /// Process exit code: 1 for bad input, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            RangeError::Write { .. } | RangeError::Internal(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = RangeError> = std::result::Result<T, E>;
