//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any nightshift operation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("translation failed at stage `{stage}`: {message}")]
    Translation { stage: String, message: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("numerical instability: {0}")]
    NumericalInstability(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("image `{image_id}`: {message}")]
    ImageProcessing { image_id: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
