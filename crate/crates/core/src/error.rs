use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Inputs that are individually valid but do not fit together
    /// (mismatched grids, exact mode with a learner, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A factory was asked for parameters outside the range where its
    /// construction is defined.
    #[error("construction error: {0}")]
    Construction(String),

    /// Bad caller input: out-of-range price, empty list, malformed value.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("solver error: {0}")]
    Solver(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
