//! The experiment grid: model ladder, recipes, seeds and the target scale.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthetic::SyntheticSection;

/// One rung of the model ladder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub size_label: String,
    /// Non-embedding parameter count (N).
    pub non_embedding_params: u64,
    /// Tokens seen by the end of training (D).
    pub tokens_trained: u64,
    pub train_steps: u64,
    /// Sequences per batch.
    pub batch_size: u64,
    pub hidden_dim: u64,
    pub n_heads: u64,
    pub n_layers: u64,
    pub learning_rate: f64,
}

impl ModelConfig {
    pub fn params(&self) -> f64 {
        self.non_embedding_params as f64
    }

    pub fn tokens(&self) -> f64 {
        self.tokens_trained as f64
    }

    /// Tokens seen at `step`, assuming a constant number of tokens per step.
    pub fn tokens_at_step(&self, step: u64) -> u64 {
        ((self.tokens_trained as u128 * step as u128) / self.train_steps as u128) as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub size: String,
    pub tasks: Vec<String>,
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteManifest {
    /// Ascending by non-embedding parameters.
    pub ladder: Vec<ModelConfig>,
    pub recipes: Vec<String>,
    /// The first seed is the default (fully trained) seed.
    pub seeds: Vec<String>,
    pub target: TargetSpec,
    /// Fraction of training steps non-default seeds are allowed to stop at.
    pub early_stop_fraction: f64,
    /// When set, every rung must have `tokens_trained / params` within
    /// `ratio_tolerance` (relative) of this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_param_ratio: Option<f64>,
    #[serde(default = "default_ratio_tolerance")]
    pub ratio_tolerance: f64,
    /// Ground-truth curves for generated suites.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
}

fn default_ratio_tolerance() -> f64 {
    0.05
}

impl SuiteManifest {
    pub fn size(&self, label: &str) -> Result<&ModelConfig> {
        self.ladder
            .iter()
            .find(|m| m.size_label == label)
            .ok_or_else(|| Error::UnknownSize(label.to_string()))
    }

    pub fn size_index(&self, label: &str) -> Result<usize> {
        self.ladder
            .iter()
            .position(|m| m.size_label == label)
            .ok_or_else(|| Error::UnknownSize(label.to_string()))
    }

    pub fn target_config(&self) -> &ModelConfig {
        // validated at construction
        self.size(&self.target.size).expect("target size is in the ladder")
    }

    pub fn default_seed(&self) -> &str {
        &self.seeds[0]
    }

    pub fn size_labels(&self) -> Vec<String> {
        self.ladder.iter().map(|m| m.size_label.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ladder.is_empty() {
            return Err(Error::validation("ladder-nonempty", "ladder has no entries"));
        }
        let mut labels = HashSet::new();
        for m in &self.ladder {
            if !labels.insert(m.size_label.as_str()) {
                return Err(Error::validation(
                    "ladder-unique-labels",
                    format!("size label `{}` appears twice", m.size_label),
                ));
            }
            if m.non_embedding_params == 0 {
                return Err(Error::validation(
                    "params-positive",
                    format!("{}: non_embedding_params must be > 0", m.size_label),
                ));
            }
            if m.tokens_trained == 0 {
                return Err(Error::validation(
                    "tokens-positive",
                    format!("{}: tokens_trained must be > 0", m.size_label),
                ));
            }
            if m.train_steps == 0 {
                return Err(Error::validation(
                    "steps-positive",
                    format!("{}: train_steps must be > 0", m.size_label),
                ));
            }
            if !m.learning_rate.is_finite() {
                return Err(Error::validation(
                    "lr-finite",
                    format!("{}: learning_rate must be finite", m.size_label),
                ));
            }
            if let Some(ratio) = self.token_param_ratio {
                let observed = m.tokens() / m.params();
                let rel = (observed - ratio).abs() / ratio;
                if rel > self.ratio_tolerance {
                    return Err(Error::validation(
                        "token-param-ratio",
                        format!(
                            "{}: tokens/params = {observed:.2}, declared ratio {ratio} (off by {:.1}%)",
                            m.size_label,
                            rel * 100.0
                        ),
                    ));
                }
            }
        }
        for w in self.ladder.windows(2) {
            if w[1].non_embedding_params <= w[0].non_embedding_params {
                return Err(Error::validation(
                    "ladder-ascending",
                    format!(
                        "{} ({}) does not exceed {} ({})",
                        w[1].size_label, w[1].non_embedding_params, w[0].size_label, w[0].non_embedding_params
                    ),
                ));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::validation("seeds-nonempty", "at least one seed is required"));
        }
        check_unique("seeds-unique", &self.seeds)?;
        if self.recipes.is_empty() {
            return Err(Error::validation("recipes-nonempty", "at least one recipe is required"));
        }
        check_unique("recipes-unique", &self.recipes)?;
        if !labels.contains(self.target.size.as_str()) {
            return Err(Error::validation(
                "target-in-ladder",
                format!("target size `{}` is not a ladder entry", self.target.size),
            ));
        }
        if self.target.tasks.is_empty() {
            return Err(Error::validation("target-tasks", "target needs at least one task"));
        }
        if !(self.early_stop_fraction > 0.0 && self.early_stop_fraction <= 1.0) {
            return Err(Error::validation(
                "early-stop-fraction",
                format!("early_stop_fraction {} is outside (0, 1]", self.early_stop_fraction),
            ));
        }
        if let Some(syn) = &self.synthetic {
            syn.validate(self)?;
        }
        Ok(())
    }
}

fn check_unique(rule: &'static str, items: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for it in items {
        if !seen.insert(it.as_str()) {
            return Err(Error::validation(rule, format!("`{it}` appears twice")));
        }
    }
    Ok(())
}

/// Parse and validate a TOML manifest document.
pub fn parse_manifest(text: &str) -> Result<SuiteManifest> {
    let manifest: SuiteManifest = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|span| text[..span.start.min(text.len())].matches('\n').count() + 1);
        Error::parse(line, "manifest", e.message())
    })?;
    manifest.validate()?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &SuiteManifest) -> Result<String> {
    toml::to_string(manifest).map_err(|e| Error::parse(None, "manifest", e))
}
