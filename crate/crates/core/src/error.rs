//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (qubit counts, hyperparameters, unknown keys).
    #[error("configuration error: {0}")]
    Config(String),

    /// Caller supplied inconsistent arguments (dimension mismatch, index out of range).
    #[error("usage error: {0}")]
    Usage(String),

    /// The training loop cannot proceed (single-class batch, non-finite loss).
    #[error("training error: {0}")]
    Training(String),

    /// All kernel quadratic forms vanished, so the weights are undefined.
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    /// No packing of the requested circuits fits on the device.
    #[error("capacity error: {0}")]
    Capacity(String),

    #[error("{path}:{line}: {msg}")]
    Ingestion {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for configuration and input problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Usage(_)
            | Error::Ingestion { .. }
            | Error::Io { .. }
            | Error::Json(_) => 2,
            Error::Training(_) | Error::DegenerateKernel(_) | Error::Capacity(_) => 1,
        }
    }
}
