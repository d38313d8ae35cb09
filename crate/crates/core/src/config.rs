//! Run configuration file: `seed` plus `[model]`, `[train]` and `[data]`
//! tables. Unknown keys are rejected. `[model]` may name a `preset` whose
//! values the remaining keys override.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

pub const SEED_ENV: &str = "CVIT_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root holding `train/`, optionally `val/` and `test/`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    pub hflip: bool,
    pub vflip: bool,
    pub crop: bool,
    pub crop_min: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let a = AugmentConfig::default();
        DataConfig { root: None, hflip: a.hflip, vflip: a.vflip, crop: a.crop, crop_min: a.crop_min }
    }
}

impl DataConfig {
    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig { hflip: self.hflip, vflip: self.vflip, crop: self.crop, crop_min: self.crop_min }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let Some(toml::Value::Table(model)) = table.get_mut("model") {
            if let Some(preset) = model.remove("preset") {
                let name = preset.as_str().ok_or_else(|| Error::Config("model.preset must be a string".into()))?;
                let base = toml::Table::try_from(ModelConfig::preset(name)?).map_err(|e| Error::Config(e.to_string()))?;
                let overrides = std::mem::replace(model, base);
                model.extend(overrides);
            }
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.apply_seed()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Defaults plus the `CVIT_SEED` override.
    pub fn from_env_defaults() -> Result<Self> {
        Self::parse("")
    }

    fn apply_seed(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
        }
        self.train.seed = self.seed;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if !(self.data.crop_min > 0.0 && self.data.crop_min <= 1.0) {
            return Err(Error::Config(format!("data.crop_min {} outside (0, 1]", self.data.crop_min)));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
