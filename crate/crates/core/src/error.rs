use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid predicate `{predicate}`: {message}")]
    Predicate { predicate: String, message: String },

    #[error("not a valid annotation database ({}): {reason}", path.display())]
    Schema { path: PathBuf, reason: String },

    #[error("read-only session: changes cannot be committed")]
    ReadOnly,

    #[error("image {}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{0} not found")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

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

    pub(crate) fn predicate(predicate: &str, err: rusqlite::Error) -> Self {
        Error::Predicate {
            predicate: predicate.to_string(),
            message: err.to_string(),
        }
    }
}
