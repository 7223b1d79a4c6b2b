//! Region U-Nets (WT, ET, TC), soft dice training and cascade post-processing.

pub mod cascade;
pub mod config;
pub mod loss;
pub mod predict;
pub mod train;
pub mod unet;

pub use cascade::{cascade_postprocess, otsu_threshold, CascadeOutput, Enhancement};
pub use config::{SegConfig, SegTrainingConfig, UNetConfig, SCALING_LAYERS};
pub use loss::{soft_dice, DICE_SMOOTH};
pub use predict::{predict_case, region_probabilities, PredictOptions, PROBABILITY_THRESHOLD};
pub use train::{train_on_samples, train_unet, training_samples, validation_loss, validation_samples, SegCheckpoint, SegSample};
pub use unet::UNet;
