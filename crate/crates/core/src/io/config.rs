use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::atomic_write;
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::templates::GarmentSpec;
use crate::training::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

/// How fresh entities are seeded from templates when no checkpoint is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    pub body_gaussians: usize,
    pub garment_gaussians: usize,
    pub sh_degree: usize,
    pub opacity_logit: f64,
    /// Isotropic scale used when a vertex has no neighbours to measure.
    pub fallback_scale: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { body_gaussians: 800, garment_gaussians: 600, sh_degree: 1, opacity_logit: 0.0, fallback_scale: 0.01 }
    }
}

/// A training run. Paths are resolved relative to the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub scene: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Start from this checkpoint instead of seeding from templates.
    pub init_checkpoint: Option<PathBuf>,
    pub init: InitConfig,
    /// Garments to seed when starting from templates. Empty: the scene's own list.
    pub garments: Vec<GarmentSpec>,
    pub train: TrainConfig,
    pub loss: LossWeights,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            scene: None,
            out: None,
            init_checkpoint: None,
            init: InitConfig::default(),
            garments: Vec::new(),
            train: TrainConfig::default(),
            loss: LossWeights::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Version { found: self.version, expected: CONFIG_VERSION });
        }
        if self.init.sh_degree > crate::gaussians::sh::MAX_DEGREE {
            return Err(Error::invalid(format!("init.sh_degree must be at most {}", crate::gaussians::sh::MAX_DEGREE)));
        }
        self.train.validate()?;
        self.loss.validate()
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        cfg.validate().map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        Ok(cfg)
    }

    /// The effective configuration, every default spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config { path: path.to_path_buf(), message: e.to_string() })?;
        let mut cfg = Self::parse(&text, path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.scene, &mut cfg.out, &mut cfg.init_checkpoint].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, self.to_toml().as_bytes())
    }
}
