use std::path::PathBuf;

use glioaug_core::{Modality, Region};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] glioaug_core::Error),

    #[error("{term} loss became non-finite ({value}) at step {step}")]
    Diverged { term: String, step: usize, value: f64 },

    #[error("no {0} checkpoint available")]
    MissingCheckpoint(Modality),

    #[error("no {0} segmentation checkpoint available")]
    MissingRegion(Region),

    #[error("{}: {reason}", path.display())]
    Config { path: PathBuf, reason: String },

    #[error("input is {got}x{got}, network expects {expected}x{expected}")]
    Resolution { got: usize, expected: usize },

    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        Error::Core(glioaug_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
