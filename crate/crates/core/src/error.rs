use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = AdrError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum AdrError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("system is not positive definite after jitter (pivot {pivot} at index {index})")]
    Singular { index: usize, pivot: f64 },

    #[error("{file}:{line}: {msg}")]
    Parse {
        file: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown class id {0}")]
    UnknownClass(usize),

    #[error("class {0} was already assigned to an earlier task")]
    ClassOverlap(usize),

    #[error("empty node mask: {0}")]
    EmptyMask(&'static str),

    #[error("backward pass requires a train-mode forward with recorded dropout masks")]
    MissingDropoutMasks,

    #[error("empty performance matrix")]
    EmptyMatrix,

    #[error("class skew undefined: class {0} has no nodes")]
    UndefinedSkew(usize),

    #[error("missing checkpoint for task {0}")]
    MissingCheckpoint(usize),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}

impl AdrError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        AdrError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AdrError::Io {
            path: path.into(),
            source,
        }
    }
}
