use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Exit code for configuration and usage errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for numerical failures.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] cvc_core::Error),

    #[error("{failed} of {total} replications failed, more than the 1% allowed; first failure: {first}")]
    TooManyFailures {
        failed: usize,
        total: usize,
        first: cvc_core::Error,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Table { path: PathBuf, message: String },
}

impl RunError {
    pub fn config(message: impl Into<String>) -> Self {
        RunError::Config(message.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        RunError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use cvc_core::Error as E;
        match self {
            RunError::Core(E::NotPositiveSemidefinite { .. })
            | RunError::Core(E::NotPositiveDefinite)
            | RunError::Core(E::RankDeficient)
            | RunError::Core(E::DegenerateDenominator(_))
            | RunError::TooManyFailures { .. } => EXIT_NUMERICAL,
            _ => EXIT_CONFIG,
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;
