use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("bin width mismatch: {0} ns vs {1} ns")]
    BinWidthMismatch(f64, f64),

    #[error("counter value {value} exceeds capacity {capacity}")]
    CorruptCounter { value: u64, capacity: u64 },

    #[error("unstable queue: utilization {0:.4} >= 1")]
    UnstableQueue(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
