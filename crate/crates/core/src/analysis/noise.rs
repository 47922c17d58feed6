use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{PointIndex, SuiteManifest};
use crate::stats;

/// Seed noise and recipe spread of one (task, metric) at one size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpreadPoint {
    pub task: String,
    pub metric: String,
    pub size_label: String,
    /// Mean over recipes of the sample std over seeds.
    pub noise: f64,
    /// Sample std over recipes of the per-recipe seed means.
    pub spread: f64,
    pub decision_accuracy: Option<f64>,
}

/// Noise and spread from the final checkpoints of fully trained runs at `size`.
/// Runs that stop before `train_steps` are left out.
pub fn noise_spread(
    index: &PointIndex,
    manifest: &SuiteManifest,
    size: &str,
    task: &str,
    metric: &str,
) -> Result<NoiseSpreadPoint> {
    let cfg = manifest.size(size)?;
    let mut seed_stds = Vec::new();
    let mut recipe_means = Vec::new();
    for recipe in &manifest.recipes {
        let finals: Vec<f64> = manifest
            .seeds
            .iter()
            .filter_map(|seed| index.final_value(recipe, size, seed, task, metric))
            .filter(|(step, _)| *step >= cfg.train_steps)
            .map(|(_, v)| v)
            .collect();
        if let Some(m) = stats::mean(&finals) {
            recipe_means.push(m);
        }
        if let Some(s) = stats::sample_std(&finals) {
            seed_stds.push(s);
        }
    }
    let noise = stats::mean(&seed_stds).ok_or_else(|| {
        Error::validation(
            "noise-needs-seeds",
            format!("noise for {task}/{metric} at {size} needs a recipe with >= 2 fully trained seeds"),
        )
    })?;
    let spread = stats::sample_std(&recipe_means).ok_or_else(|| {
        Error::validation(
            "spread-needs-recipes",
            format!("spread for {task}/{metric} at {size} needs >= 2 recipes with a fully trained run"),
        )
    })?;
    Ok(NoiseSpreadPoint {
        task: task.to_string(),
        metric: metric.to_string(),
        size_label: size.to_string(),
        noise,
        spread,
        decision_accuracy: None,
    })
}
