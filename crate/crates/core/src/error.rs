use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid noise parameters: {0}")]
    InvalidParams(String),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("{path}: file not found")]
    NotFound { path: PathBuf },

    #[error("{path}: bad magic, expected {expected}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: truncated at byte {offset}")]
    Truncated { path: PathBuf, offset: u64 },

    #[error("{path}: parse error at byte {offset}: {message}")]
    Parse {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::InvalidShape(msg.into())
    }
}
