//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by dataset generation, training, and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on user-supplied values failed.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Training produced a non-finite loss or parameter.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    /// A file had an unexpected format.
    #[error("parse error in {path} line {line}: {detail}")]
    Parse {
        path: String,
        line: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
