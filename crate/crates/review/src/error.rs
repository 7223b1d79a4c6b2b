use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown session {0}")]
    UnknownSession(String),

    #[error("unknown item {0}")]
    UnknownItem(String),

    #[error("item {0} is already judged")]
    Duplicate(String),

    #[error("{} item(s) not judged yet", .0.len())]
    Incomplete(Vec<String>),

    #[error("session is not finalized")]
    NotFinalized,

    #[error("{0}")]
    Invalid(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: corrupt session log line {line}: {reason}", path.display())]
    CorruptLog { path: PathBuf, line: usize, reason: String },

    #[error(transparent)]
    Core(#[from] glioaug_core::Error),
}

impl ReviewError {
    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        ReviewError::Io {
            path: path.to_path_buf(),
            source: e,
        }
    }
}
