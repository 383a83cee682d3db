use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the correspondence pipeline.
#[derive(Debug, Error)]
pub enum NbbError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weight file format error: {0}")]
    Format(String),

    #[error("weight file schema error: {0}")]
    Schema(String),

    #[error("weight file truncated while reading {0}")]
    Truncated(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, NbbError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(NbbError::InvalidArgument(msg.into()))
}
