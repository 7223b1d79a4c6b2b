//! Networks and experiment drivers: the brain-map conditioned GAN, the
//! region U-Nets with cascade post-processing, and the ablation harness.

pub mod augnet;
pub mod error;
pub mod experiments;
pub mod segnet;

pub use error::{Error, Result};
