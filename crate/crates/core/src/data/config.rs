use std::path::Path;

use serde::{Deserialize, Serialize};

use super::toy::ToyDatasetConfig;
use crate::embed::EmbedderConfig;
use crate::error::{Error, Result};
use crate::invert::InversionConfig;
use crate::mappers::MapperConfig;
use crate::nerf::{GeneratorConfig, RenderConfig};
use crate::train::TrainConfig;

/// HTTP service settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    /// Largest render side a client may request.
    pub max_resolution: usize,
    /// Directory where session codes and histories are persisted.
    pub sessions_dir: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { bind: "127.0.0.1:8080".into(), max_resolution: 256, sessions_dir: None }
    }
}

/// Every module's settings for one run. Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub render: RenderConfig,
    pub train: TrainConfig,
    pub mapper: MapperConfig,
    pub inversion: InversionConfig,
    pub embedder: EmbedderConfig,
    pub toy: ToyDatasetConfig,
    pub service: ServiceConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.render.validate()?;
        self.train.validate()?;
        self.mapper.validate()?;
        self.inversion.validate()?;
        self.toy.validate()?;
        if self.service.max_resolution == 0 {
            return Err(Error::config("service.max_resolution", "must be at least 1"));
        }
        Ok(())
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(self).expect("config serializes")
    }
}

/// Parse and validate YAML configuration text; empty text yields the defaults.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig = if text.trim().is_empty() {
        RunConfig::default()
    } else {
        serde_yaml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?
    };
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::ConfigParse(msg) => Error::ConfigParse(format!("{}: {msg}", path.display())),
        other => other,
    })
}
