use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analysis toolkit.
#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: {0}")]
    Truncated(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("ill-conditioned covariance: {0}")]
    Conditioning(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("input too short: {0}")]
    TooShort(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl ProbeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ProbeError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = ProbeError> = std::result::Result<T, E>;
