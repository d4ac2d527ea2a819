use serde::{Deserialize, Serialize};

use super::critic::CriticConfig;
use crate::error::{Error, Result};
use crate::nn::AdamConfig;

fn gan_adam() -> AdamConfig {
    AdamConfig { beta1: 0.0, beta2: 0.99, eps: 1e-8 }
}

/// Stage-1 adversarial training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    /// Largest fraction of the viewport a patch may span.
    pub max_patch_scale: f64,
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    pub lambda_r: f64,
    /// Weight of the embedding distance in the mapper losses.
    pub lambda_c: f64,
    /// Standard deviation of the code prior.
    pub code_std: f64,
    pub adam: AdamConfig,
    pub critic: CriticConfig,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub mapper: MapperStageConfig,
    pub finetune: FinetuneConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 20_000,
            batch_size: 8,
            patch_size: 32,
            max_patch_scale: 1.0,
            lr_generator: 1e-4,
            lr_critic: 1e-4,
            lr_decay: 0.5,
            lr_decay_every: 50_000,
            lambda_r: 0.5,
            lambda_c: 0.5,
            code_std: 1.0,
            adam: gan_adam(),
            critic: CriticConfig::default(),
            log_every: 10,
            checkpoint_every: 1000,
            mapper: MapperStageConfig::default(),
            finetune: FinetuneConfig::default(),
        }
    }
}

/// Stage-2 mapper training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapperStageConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    /// Side of the full-view render the losses are computed on.
    pub render_resolution: usize,
    pub adam: AdamConfig,
    /// Prompt library file; the shipped library is used when absent.
    pub prompts: Option<String>,
}

impl Default for MapperStageConfig {
    fn default() -> Self {
        MapperStageConfig {
            steps: 2000,
            batch_size: 4,
            lr: 1e-4,
            lr_decay: 0.5,
            lr_decay_every: 50_000,
            render_resolution: 32,
            adam: AdamConfig::default(),
            prompts: None,
        }
    }
}

/// Single-scene appearance finetuning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneConfig {
    pub steps: u64,
    pub lr: f64,
    pub render_resolution: usize,
    pub adam: AdamConfig,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { steps: 100, lr: 1e-3, render_resolution: 16, adam: AdamConfig::default() }
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, "must be a positive number"))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, "must be non-negative"))
    }
}

fn decay(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::config(key, "must lie in (0, 1)"))
    }
}

pub(crate) fn validate_adam(prefix: &str, a: &AdamConfig) -> Result<()> {
    if !(0.0..1.0).contains(&a.beta1) {
        return Err(Error::config(format!("{prefix}.beta1"), "must lie in [0, 1)"));
    }
    if !(0.0..1.0).contains(&a.beta2) {
        return Err(Error::config(format!("{prefix}.beta2"), "must lie in [0, 1)"));
    }
    positive(&format!("{prefix}.eps"), a.eps)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be at least 1"));
        }
        if self.patch_size == 0 {
            return Err(Error::config("train.patch_size", "must be at least 1"));
        }
        if !(self.max_patch_scale > 0.0 && self.max_patch_scale <= 1.0) {
            return Err(Error::config("train.max_patch_scale", "must lie in (0, 1]"));
        }
        positive("train.lr_generator", self.lr_generator)?;
        positive("train.lr_critic", self.lr_critic)?;
        decay("train.lr_decay", self.lr_decay)?;
        non_negative("train.lambda_r", self.lambda_r)?;
        non_negative("train.lambda_c", self.lambda_c)?;
        positive("train.code_std", self.code_std)?;
        validate_adam("train.adam", &self.adam)?;
        self.critic.validate(self.patch_size)?;
        let m = &self.mapper;
        if m.batch_size == 0 {
            return Err(Error::config("train.mapper.batch_size", "must be at least 1"));
        }
        if m.render_resolution == 0 {
            return Err(Error::config("train.mapper.render_resolution", "must be at least 1"));
        }
        positive("train.mapper.lr", m.lr)?;
        decay("train.mapper.lr_decay", m.lr_decay)?;
        validate_adam("train.mapper.adam", &m.adam)?;
        let f = &self.finetune;
        positive("train.finetune.lr", f.lr)?;
        if f.render_resolution == 0 {
            return Err(Error::config("train.finetune.render_resolution", "must be at least 1"));
        }
        validate_adam("train.finetune.adam", &f.adam)
    }
}
