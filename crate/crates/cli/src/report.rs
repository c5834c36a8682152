//! Evaluation reports: one JSON document per bound estimate.

use std::time::SystemTime;

use serde::{Deserialize, Serialize};

use boed_core::error::CoreError;
use boed_core::estimators::{BoundEstimate, BoundKind};

/// What an evaluation measured and where it came from. `config_hash` equals
/// the evaluated checkpoint's embedded hash, or is empty for the baseline
/// policy, which has no training artifact behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub bound: BoundKind,
    pub value: f64,
    pub std_error: f64,
    pub contrastives: usize,
    pub rollouts: usize,
    pub model: String,
    pub checkpoint: String,
    pub timestamp: String,
    pub config_hash: String,
}

impl EvalReport {
    pub fn new(
        estimate: &BoundEstimate,
        model: impl Into<String>,
        checkpoint: impl Into<String>,
        config_hash: impl Into<String>,
    ) -> Self {
        EvalReport {
            bound: estimate.kind,
            value: estimate.value,
            std_error: estimate.std_error,
            contrastives: estimate.contrastives,
            rollouts: estimate.rollouts,
            model: model.into(),
            checkpoint: checkpoint.into(),
            timestamp: humantime::format_rfc3339_seconds(SystemTime::now()).to_string(),
            config_hash: config_hash.into(),
        }
    }

    pub fn to_json(&self) -> Result<String, CoreError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Strict parse: unknown fields are an error, so emitted reports stay
    /// readable by the pickiest consumer.
    pub fn parse(text: &str) -> Result<Self, CoreError> {
        Ok(serde_json::from_str(text)?)
    }
}
