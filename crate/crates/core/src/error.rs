use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by ingestion, anonymization and auditing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown node `{node}` in taxonomy `{tree}`")]
    UnknownNode { tree: String, node: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("data integrity error: {0}")]
    DataIntegrity(String),

    #[error("infeasible release: {0}")]
    Infeasible(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
