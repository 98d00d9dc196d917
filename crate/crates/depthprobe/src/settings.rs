//! Run settings file: a flat key/value document in JSON or TOML with exactly
//! the keys below. CLI flags override file values; unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::DepthConfig;

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("settings io: {0}")]
    Io(#[from] std::io::Error),
    #[error("settings parse: {0}")]
    Parse(String),
}

/// The settings file contents. Every field is optional so flags and defaults
/// can fill the gaps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub topic: Option<String>,
    pub questions_per_depth: Option<u32>,
    pub passes_per_tier: Option<u32>,
    pub survival_threshold: Option<f64>,
    pub max_depth: Option<u32>,
    pub seed: Option<u64>,
    pub fact_retry_limit: Option<u32>,
    pub bootstrap_replicates: Option<u32>,
    pub confidence_level: Option<f64>,
    pub target_model: Option<String>,
    pub evaluator_model: Option<String>,
}

impl RunSettings {
    /// Parses JSON or TOML, deciding by content shape.
    pub fn parse(text: &str) -> Result<RunSettings, SettingsError> {
        let trimmed = text.trim_start();
        if trimmed.starts_with('{') {
            serde_json::from_str(trimmed).map_err(|e| SettingsError::Parse(e.to_string()))
        } else {
            toml::from_str(text).map_err(|e| SettingsError::Parse(e.to_string()))
        }
    }

    pub fn load(path: &Path) -> Result<RunSettings, SettingsError> {
        RunSettings::parse(&std::fs::read_to_string(path)?)
    }

    /// Later settings win field by field (file <- flags).
    pub fn overridden_by(mut self, other: &RunSettings) -> RunSettings {
        macro_rules! take {
            ($field:ident) => {
                if other.$field.is_some() {
                    self.$field = other.$field.clone();
                }
            };
        }
        take!(topic);
        take!(questions_per_depth);
        take!(passes_per_tier);
        take!(survival_threshold);
        take!(max_depth);
        take!(seed);
        take!(fact_retry_limit);
        take!(bootstrap_replicates);
        take!(confidence_level);
        take!(target_model);
        take!(evaluator_model);
        self
    }

    /// Materializes the run configuration, filling unset fields with the
    /// engine defaults.
    pub fn to_config(&self) -> DepthConfig {
        let defaults = DepthConfig::default();
        DepthConfig {
            topic: self.topic.clone().unwrap_or(defaults.topic),
            questions_per_depth: self
                .questions_per_depth
                .unwrap_or(defaults.questions_per_depth),
            passes_per_tier: self.passes_per_tier.unwrap_or(defaults.passes_per_tier),
            survival_threshold: self
                .survival_threshold
                .unwrap_or(defaults.survival_threshold),
            max_depth: self.max_depth.unwrap_or(defaults.max_depth),
            seed: self.seed.unwrap_or(defaults.seed),
            fact_retry_limit: self.fact_retry_limit.unwrap_or(defaults.fact_retry_limit),
            bootstrap_replicates: self
                .bootstrap_replicates
                .unwrap_or(defaults.bootstrap_replicates),
            confidence_level: self.confidence_level.unwrap_or(defaults.confidence_level),
        }
    }

    pub fn target_model_or(&self, fallback: &str) -> String {
        self.target_model
            .clone()
            .unwrap_or_else(|| fallback.to_string())
    }

    pub fn evaluator_model_or(&self, fallback: &str) -> String {
        self.evaluator_model
            .clone()
            .unwrap_or_else(|| fallback.to_string())
    }
}
