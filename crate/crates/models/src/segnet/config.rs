use serde::{Deserialize, Serialize};

use glioaug_core::preprocess::{PATCH_DEPTH, SEG_CHANNELS};

use crate::error::{Error, Result};

/// Downsampling stages of every U-Net.
pub const SCALING_LAYERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UNetConfig {
    pub base_features: usize,
    /// Slices are padded or cropped to `resolution x resolution`.
    pub resolution: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            base_features: 16,
            resolution: 64,
        }
    }
}

impl UNetConfig {
    pub fn in_channels(&self) -> usize {
        SEG_CHANNELS.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.resolution % (1 << SCALING_LAYERS) != 0 {
            return Err(Error::Invalid(format!(
                "U-Net resolution {} is not a positive multiple of {}",
                self.resolution,
                1 << SCALING_LAYERS
            )));
        }
        if self.base_features == 0 {
            return Err(Error::Invalid("base_features must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegTrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Soft dice stabilizer.
    pub smooth: f64,
    pub flip: bool,
    pub patch_depth: usize,
}

impl Default for SegTrainingConfig {
    fn default() -> Self {
        SegTrainingConfig {
            epochs: 100,
            batch_size: 8,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            smooth: 0.01,
            flip: true,
            patch_depth: PATCH_DEPTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SegConfig {
    pub unet: UNetConfig,
    pub training: SegTrainingConfig,
}

impl SegConfig {
    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        if self.training.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        if !(self.training.smooth > 0.0) {
            return Err(Error::Invalid("soft dice stabilizer must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: SegConfig = toml::from_str(text).map_err(|e| Error::Invalid(format!("segnet config: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}
