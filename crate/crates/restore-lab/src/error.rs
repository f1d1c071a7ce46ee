//! Error categories, each mapped to a stable process exit code by the CLI.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Bad user-supplied data (images, dataset layout, sizes).
    #[error("input error: {0}")]
    Input(String),

    /// Inconsistent configuration (widths, divisors, unknown variants).
    #[error("configuration error: {0}")]
    Config(String),

    /// Non-finite values encountered during computation.
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) => 2,
            Error::Config(_) => 3,
            Error::Numeric(_) => 4,
            Error::Io { .. } => 5,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
