//! Run configuration: one TOML file describing a complete experiment.
//!
//! Unknown keys anywhere in the file are rejected with the offending key
//! named. Defaults: `reward = "dense"`, `output_dir = "runs"`, the trainer
//! block defaults to its standard hyperparameters, and the estimator block
//! to `l = 4095`, `rollouts = 256`, `bound = "sPCE"`. A top-level `seed`
//! overrides the trainer block's seed so one line switches replicates.

use std::path::Path;

use serde::{Deserialize, Serialize};

use boed_core::checkpoint::CheckpointMeta;
use boed_core::error::CoreError;
use boed_core::estimators::{BoundKind, RewardKind};
use boed_core::models;
use boed_core::trainer::TrainerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorBlock {
    pub l: usize,
    pub rollouts: usize,
    pub bound: BoundKind,
}

impl Default for EstimatorBlock {
    fn default() -> Self {
        EstimatorBlock {
            l: 4095,
            rollouts: 256,
            bound: BoundKind::Spce,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_reward")]
    pub reward: RewardKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    pub model: ModelBlock,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub estimator: EstimatorBlock,
}

fn default_reward() -> RewardKind {
    RewardKind::Dense
}

fn default_output_dir() -> String {
    "runs".to_string()
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CoreError> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| CoreError::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String, CoreError> {
        toml::to_string_pretty(self).map_err(|e| CoreError::format(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        models::build(&self.model.name)?;
        self.effective_trainer().validate()?;
        if self.estimator.l < 1 {
            return Err(CoreError::config("estimator.l must be at least 1"));
        }
        if self.estimator.rollouts < 1 {
            return Err(CoreError::config("estimator.rollouts must be at least 1"));
        }
        Ok(())
    }

    /// The trainer block with the top-level seed applied, when present.
    pub fn effective_trainer(&self) -> TrainerConfig {
        let mut t = self.trainer.clone();
        if let Some(seed) = self.seed {
            t.seed = seed;
        }
        t
    }

    /// The checkpoint meta this run would embed; its hash identifies the run.
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            model: self.model.name.clone(),
            reward: self.reward,
            trainer: self.effective_trainer(),
        }
    }
}
