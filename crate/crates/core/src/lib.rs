//! Volumes, label regions, brain maps, preprocessing, metrics and phantoms
//! for GAN-augmented glioma segmentation.
//!
//! Everything numeric is generic over [`Scalar`]; the aliases below fix the
//! element type to `f32`, which is what the pipeline uses in practice.

pub mod brainmap;
pub mod case;
pub mod error;
pub mod image;
pub mod io;
pub mod labels;
pub mod metrics;
pub mod phantom;
pub mod preprocess;
pub mod scalar;
pub mod volume;

pub use brainmap::{BrainMap, LesionTransform, MapPyramid};
pub use case::{PatientCase, Provenance};
pub use error::{Error, Result};
pub use image::Image2;
pub use labels::{BinaryMask, Region, RegionMask};
pub use scalar::Scalar;
pub use volume::{Modality, Shape3, Spacing, Volume3D};

pub type Volume = Volume3D<f32>;
pub type Case = PatientCase<f32>;
pub type Image = Image2<f32>;
pub type SegReport = metrics::SegMetricReport<f32>;
