use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by every stage of the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/vector dimensions do not match what an operation requires.
    #[error("shape error: {0}")]
    Shape(String),

    /// Non-finite values or arithmetic that cannot be represented.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArg(String),

    /// A value does not fit the requested fixed-point or payload width.
    #[error("overflow: {0}")]
    Overflow(String),

    /// A stream or file violates its own invariants.
    #[error("corrupt data: {0}")]
    Corrupt(String),

    /// Manifest and blob disagree, or a required entry is missing.
    #[error("container error: {0}")]
    Container(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
