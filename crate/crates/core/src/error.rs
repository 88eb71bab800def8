use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("signal too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("undefined statistic: {0}")]
    UndefinedStatistic(String),
    #[error("undefined reference: {0}")]
    UndefinedReference(String),
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error("transcoder error: {0}")]
    Transcoder(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("statistics error: {0}")]
    Statistics(String),
    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward error: {0}")]
    Backward(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by an external program rather than by the data.
    pub fn is_external(&self) -> bool {
        matches!(self, Error::Transcoder(_))
    }
}
