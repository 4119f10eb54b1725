use std::path::PathBuf;

use thiserror::Error;

use crate::train::IterationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification of failures, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("state error: {0}")]
    State(String),

    #[error("model spec error: {0}")]
    Spec(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("checkpoint is corrupt: bad magic bytes {found:?}")]
    CorruptMagic { found: [u8; 4] },

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },

    #[error("checkpoint is truncated: {0}")]
    Truncated(String),

    #[error("checkpoint is malformed: {0}")]
    MalformedCheckpoint(String),

    #[error("cannot ingest image {path}: {reason}")]
    Ingestion { path: PathBuf, reason: String },

    #[error("clustering error: {0}")]
    Clustering(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("comparison error: {0}")]
    Comparison(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("hierarchical run aborted in iteration {iteration}: {source}")]
    IterationFailed {
        iteration: usize,
        #[source]
        source: Box<Error>,
        completed: Vec<IterationReport>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Parameter(_) | Error::Spec(_) | Error::Config(_) => ErrorKind::Config,
            Error::Validation(_)
            | Error::CorruptMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::Truncated(_)
            | Error::MalformedCheckpoint(_)
            | Error::Ingestion { .. }
            | Error::Io { .. }
            | Error::Json(_) => ErrorKind::Data,
            Error::IterationFailed { source, .. } => source.kind(),
            Error::Dimension { .. }
            | Error::State(_)
            | Error::Clustering(_)
            | Error::Evaluation(_)
            | Error::Comparison(_)
            | Error::NonFinite(_) => ErrorKind::Runtime,
        }
    }
}
