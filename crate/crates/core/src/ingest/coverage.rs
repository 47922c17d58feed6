use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::ingest::manifest::SuiteManifest;
use crate::ingest::records::CheckpointKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    /// The run reached its final training step.
    Complete,
    /// A non-default seed that stopped at or after the declared early-stop point.
    EarlyStopConsistent,
    /// Stopped before the expected point.
    Truncated,
    /// No checkpoints at all.
    Absent,
}

impl CellStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Complete => "complete",
            CellStatus::EarlyStopConsistent => "early-stop consistent",
            CellStatus::Truncated => "truncated",
            CellStatus::Absent => "absent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageCell {
    pub recipe: String,
    pub size_label: String,
    pub seed: String,
    pub max_step: Option<u64>,
    pub n_checkpoints: usize,
    /// `max_step / train_steps`.
    pub fraction_present: f64,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    /// Manifest order: recipe, then size, then seed.
    pub cells: Vec<CoverageCell>,
    /// Keys that reference a recipe, size or seed not in the manifest, or a
    /// step/token count beyond the configured training length.
    pub out_of_grid: Vec<CheckpointKey>,
}

impl CoverageReport {
    pub fn flagged(&self) -> impl Iterator<Item = &CoverageCell> {
        self.cells
            .iter()
            .filter(|c| matches!(c.status, CellStatus::Truncated | CellStatus::Absent))
    }

    pub fn count(&self, status: CellStatus) -> usize {
        self.cells.iter().filter(|c| c.status == status).count()
    }
}

/// Summarize which (recipe, size, seed) runs are present and how far they got.
/// Reporting only: missing cells are flagged, never errors.
pub fn coverage_report<'a, I>(keys: I, manifest: &SuiteManifest) -> CoverageReport
where
    I: IntoIterator<Item = &'a CheckpointKey>,
{
    let mut steps: BTreeMap<(&str, &str, &str), BTreeSet<u64>> = BTreeMap::new();
    let mut out_of_grid = BTreeSet::new();
    for key in keys {
        let in_grid = manifest.recipes.contains(&key.recipe)
            && manifest.seeds.contains(&key.seed)
            && manifest
                .size(&key.size_label)
                .map(|m| key.step <= m.train_steps && key.tokens_seen <= m.tokens_trained)
                .unwrap_or(false);
        if !in_grid {
            out_of_grid.insert(key.clone());
            continue;
        }
        steps
            .entry((&key.recipe, &key.size_label, &key.seed))
            .or_default()
            .insert(key.step);
    }

    let mut cells = Vec::new();
    for recipe in &manifest.recipes {
        for m in &manifest.ladder {
            for (si, seed) in manifest.seeds.iter().enumerate() {
                let present = steps.get(&(recipe.as_str(), m.size_label.as_str(), seed.as_str()));
                let max_step = present.and_then(|s| s.iter().next_back().copied());
                let fraction = max_step.map_or(0.0, |s| s as f64 / m.train_steps as f64);
                let status = match max_step {
                    None => CellStatus::Absent,
                    Some(s) if s >= m.train_steps => CellStatus::Complete,
                    Some(_) if si > 0 && fraction + 1e-12 >= manifest.early_stop_fraction => {
                        CellStatus::EarlyStopConsistent
                    }
                    Some(_) => CellStatus::Truncated,
                };
                cells.push(CoverageCell {
                    recipe: recipe.clone(),
                    size_label: m.size_label.clone(),
                    seed: seed.clone(),
                    max_step,
                    n_checkpoints: present.map_or(0, |s| s.len()),
                    fraction_present: fraction,
                    status,
                });
            }
        }
    }
    CoverageReport {
        cells,
        out_of_grid: out_of_grid.into_iter().collect(),
    }
}
