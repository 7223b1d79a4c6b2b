use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augnet::AugConfig;
use crate::error::{Error, Result};
use crate::segnet::SegConfig;

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Where the cases of an ablation come from. Empty id lists select every
/// case found in the directory.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSources {
    pub real_dir: PathBuf,
    pub synthetic_dir: PathBuf,
    pub validation_dir: PathBuf,
    pub real_cases: Vec<String>,
    pub synthetic_cases: Vec<String>,
    pub validation_cases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub seed: u64,
    /// U-Nets trained per column and region; metrics are pooled over repeats.
    pub repeats: usize,
    /// Synthetic fractions, ascending. The real-only column is always added.
    pub fractions: Vec<f64>,
    /// Fixed enhancement threshold for the cascade; Otsu when absent.
    pub enhancement_threshold: Option<f64>,
    /// Runs are written to `<output_dir>/<hash>/`.
    pub output_dir: PathBuf,
    pub data: DataSources,
    pub segnet: SegConfig,
    /// Configuration the synthetic cases were generated with, kept in the
    /// run snapshot.
    pub gan: Option<AugConfig>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            seed: 0,
            repeats: 1,
            fractions: DEFAULT_FRACTIONS.to_vec(),
            enhancement_threshold: None,
            output_dir: PathBuf::from("runs"),
            data: DataSources::default(),
            segnet: SegConfig::default(),
            gan: None,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Invalid("repeats must be positive".into()));
        }
        if self.fractions.is_empty() {
            return Err(Error::Invalid("no fractions given".into()));
        }
        if let Some(f) = self.fractions.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::Invalid(format!("fraction {f} outside [0, 1]")));
        }
        if self.fractions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid("fractions must be strictly ascending".into()));
        }
        self.segnet.validate()?;
        if let Some(g) = &self.gan {
            g.validate()?;
        }
        Ok(())
    }

    /// Table columns: the configured fractions with 0 prepended if missing.
    pub fn columns(&self) -> Vec<f64> {
        let mut f = self.fractions.clone();
        if f.first() != Some(&0.0) {
            f.insert(0, 0.0);
        }
        f
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: AblationConfig = toml::from_str(text).map_err(|e| Error::Invalid(format!("ablation config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads a config file; relative paths are taken from the file's directory.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c: AblationConfig = toml::from_str(&text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        c.validate().map_err(|e| Error::Config {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut c.output_dir,
            &mut c.data.real_dir,
            &mut c.data.synthetic_dir,
            &mut c.data.validation_dir,
        ] {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }
}
