use serde::{Deserialize, Serialize};

use glioaug_core::brainmap::pyramid_depth;

use crate::error::{Error, Result};

/// Lowest pyramid resolution.
pub const PYRAMID_BASE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub top_resolution: usize,
    pub base_features: usize,
    pub slope: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            top_resolution: 64,
            base_features: 8,
            slope: 0.2,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if pyramid_depth(PYRAMID_BASE, self.top_resolution).is_none() {
            return Err(Error::Core(glioaug_core::Error::BadResolution(self.top_resolution)));
        }
        if self.base_features < 8 {
            return Err(Error::Invalid(format!("base_features {} < 8", self.base_features)));
        }
        Ok(())
    }

    /// Number of doublings above the 4x4 level.
    pub fn depth(&self) -> usize {
        pyramid_depth(PYRAMID_BASE, self.top_resolution).unwrap_or(0)
    }

    /// Channels of level `i`: sixteen times the base at the coarsest levels,
    /// halving per level down to the base at the top.
    pub fn width(&self, i: usize) -> usize {
        self.base_features << (self.depth() - i).min(4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_features: usize,
    pub slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            base_features: 32,
            slope: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    /// Convolution widths of the four blocks; features are taken after each pool.
    pub widths: [usize; 4],
    pub seed: u64,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            widths: [16, 32, 64, 64],
            seed: 19,
        }
    }
}

/// Weights of the generator objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub perceptual: Vec<f64>,
    pub pixel: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            perceptual: vec![1.0; 4],
            pixel: 1.0,
            adversarial: 0.05,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = self.perceptual.iter().chain([&self.pixel, &self.adversarial]);
        if all.clone().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::Invalid(format!("loss weights must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugTrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Rebalance loss weights after every this many epochs (0 disables).
    pub rebalance_every: usize,
    pub weight_bounds: [f64; 2],
    /// Slices taken per case, evenly spaced over the brain-bearing range (0 = all).
    pub slices_per_case: usize,
    pub weights: LossWeights,
}

impl Default for AugTrainingConfig {
    fn default() -> Self {
        AugTrainingConfig {
            epochs: 100,
            batch_size: 4,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            rebalance_every: 10,
            weight_bounds: [1e-4, 1e4],
            slices_per_case: 0,
            weights: LossWeights::default(),
        }
    }
}

/// Everything needed to rebuild and train one modality's networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub extractor: ExtractorConfig,
    pub training: AugTrainingConfig,
}

impl AugConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.training.weights.validate()?;
        if self.training.weights.perceptual.len() != 4 {
            return Err(Error::Invalid("exactly four perceptual weights are required".into()));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Invalid("batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: AugConfig = toml::from_str(text).map_err(|e| Error::Invalid(format!("augnet config: {e}")))?;
        c.validate()?;
        Ok(c)
    }
}
