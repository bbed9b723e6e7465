use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },

    #[error("fluctuation field has nonzero value at boundary node {node}")]
    NonzeroBoundary { node: usize },

    #[error("field has {found} nodes, grid expects {expected}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("det F = {det} is not 1 (off the constraint set)")]
    OffSigma { det: f64 },

    #[error("quadrature too coarse: {0}")]
    Quadrature(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
