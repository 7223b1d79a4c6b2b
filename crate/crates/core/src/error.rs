use std::path::PathBuf;

use thiserror::Error;

use crate::volume::Modality;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed header: {reason}", path.display())]
    Header { path: PathBuf, reason: String },

    #[error("{}: nifti: {reason}", path.display())]
    Nifti { path: PathBuf, reason: String },

    #[error("case {case}: missing {modality} volume (looked for {})", path.display())]
    MissingModality {
        case: String,
        modality: Modality,
        path: PathBuf,
    },

    #[error("volumes disagree on geometry:\n{0}")]
    GeometryMismatch(String),

    #[error("label volume contains values outside the label set {allowed:?}: {found:?}")]
    UnknownLabels { allowed: Vec<i32>, found: Vec<f64> },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("expected a {expected} volume, got {got}")]
    WrongModality { expected: Modality, got: Modality },

    #[error("brain mask is empty")]
    EmptyMask,

    #[error("zero intensity variance inside the brain mask")]
    ZeroVariance,

    #[error("case {case} has no tumor voxels (WT={wt}, TC={tc}, ET={et})")]
    EmptyTumor {
        case: String,
        wt: usize,
        tc: usize,
        et: usize,
    },

    #[error("volume is entirely zero")]
    AllZero,

    #[error("volume has negative intensities (min {0})")]
    NegativeIntensity(f64),

    #[error("pyramid top resolution {0} is not 4 * 2^k")]
    BadResolution(usize),

    #[error("lesion transform out of bounds: {0}")]
    TransformBounds(String),

    #[error("transform pushes {overflow} tumor voxels outside the brain")]
    LesionOverflow { overflow: usize },

    #[error("image is {got:?}, smaller than the {window}x{window} window")]
    ImageTooSmall { got: (usize, usize), window: usize },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
