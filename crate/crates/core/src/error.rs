use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic {found:?}, expected \"THZCUBE1\"")]
    BadMagic { path: PathBuf, found: [u8; 8] },

    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("{path}: malformed header: {reason}")]
    BadHeader { path: PathBuf, reason: String },

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("invalid {field}: {reason}")]
    Invalid { field: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("no spectral variance: every pixel carries the same spectrum")]
    NoVariance,

    #[error("kernel of size {size} exceeds the limit of {max}; use a coarser pixel pitch")]
    KernelTooLarge { size: usize, max: usize },

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}; lower the learning rate (currently {learning_rate})")]
    Diverged {
        epoch: usize,
        step: usize,
        loss: f64,
        learning_rate: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            reason: reason.into(),
        }
    }
}
