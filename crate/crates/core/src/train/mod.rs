//! Adversarial generator training, mapper training and single-scene appearance finetuning.

pub mod config;
pub mod critic;
pub mod gan;
pub mod metrics;
pub mod prompts;
pub mod stage1;

pub use config::{FinetuneConfig, MapperStageConfig, TrainConfig};
pub use critic::{Critic, CriticConfig};
pub use gan::{gan_objective, log_sigmoid, lr_schedule, r1_penalty, GanLosses};
pub use metrics::MetricsLog;
pub use prompts::{Prompt, PromptLibrary, PromptTemplates};
pub use stage1::{Stage1Record, Stage1Trainer};
pub mod stage2;

pub use stage2::{Stage2Record, Stage2Trainer};
pub mod finetune;

pub use finetune::{evaluation_poses, finetune_appearance, FinetuneReport, SceneField};
