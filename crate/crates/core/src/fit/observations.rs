//! Turns metric points into fit observations and runs whole fit chains.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fit::{
    fit_acc_curve, fit_loss_curve, fit_single_step, smooth_final_loss, DirectPoint, FitChain, LinkPoint, LossPoint,
    ScalePoint, SizeSubset, VariantSpec,
};
use crate::ingest::{PointIndex, SuiteManifest};

/// One multi-scale fit to run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRequest {
    pub recipe: String,
    pub task: String,
    pub variant: VariantSpec,
    pub subset: SizeSubset,
    /// Defaults to the manifest's default seed.
    pub seed: Option<String>,
    /// Series used as the task loss in two-step fits.
    pub loss_metric: String,
    /// Series being predicted.
    pub value_metric: String,
}

impl FitRequest {
    fn seed<'a>(&'a self, manifest: &'a SuiteManifest) -> &'a str {
        self.seed.as_deref().unwrap_or(manifest.default_seed())
    }
}

/// Smoothed final loss per fully trained size in the subset.
pub fn loss_points(index: &PointIndex, manifest: &SuiteManifest, req: &FitRequest) -> Result<Vec<LossPoint>> {
    let seed = req.seed(manifest);
    let mut out = Vec::new();
    let mut missing = Vec::new();
    for size in &req.subset.sizes {
        let cfg = manifest.size(size)?;
        let series = index.series(&req.recipe, size, seed, &req.task, &req.loss_metric);
        match series {
            Some(s) if s.keys().next_back() == Some(&cfg.train_steps) => {
                let obs: Vec<(u64, f64)> = s.iter().map(|(&step, &(_, v))| (step, v)).collect();
                out.push(LossPoint {
                    scale: ScalePoint::new(cfg.params(), cfg.tokens()),
                    loss: smooth_final_loss(&obs)?,
                });
            }
            _ => missing.push(format!("{}/{size}/{seed}/{}/{} (final step)", req.recipe, req.task, req.loss_metric)),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    Ok(out)
}

/// Every checkpoint of the subset's runs with both a loss and a metric value.
pub fn link_points(index: &PointIndex, manifest: &SuiteManifest, req: &FitRequest) -> Result<Vec<LinkPoint>> {
    let seed = req.seed(manifest);
    let mut out = Vec::new();
    for size in &req.subset.sizes {
        manifest.size(size)?;
        let (Some(loss), Some(value)) = (
            index.series(&req.recipe, size, seed, &req.task, &req.loss_metric),
            index.series(&req.recipe, size, seed, &req.task, &req.value_metric),
        ) else {
            continue;
        };
        let final_step = *value.keys().next_back().expect("series is nonempty");
        for (&step, &(_, v)) in value {
            if let Some(&(_, l)) = loss.get(&step) {
                out.push(LinkPoint {
                    loss: l,
                    value: v,
                    step,
                    final_step,
                });
            }
        }
    }
    Ok(out)
}

/// Every checkpoint (with tokens seen > 0) of the subset's runs.
pub fn direct_points(index: &PointIndex, manifest: &SuiteManifest, req: &FitRequest) -> Result<Vec<DirectPoint>> {
    let seed = req.seed(manifest);
    let mut out = Vec::new();
    for size in &req.subset.sizes {
        let cfg = manifest.size(size)?;
        let Some(series) = index.series(&req.recipe, size, seed, &req.task, &req.value_metric) else {
            continue;
        };
        for &(tokens, v) in series.values() {
            if tokens > 0 {
                out.push(DirectPoint {
                    scale: ScalePoint::new(cfg.params(), tokens as f64),
                    value: v,
                });
            }
        }
    }
    Ok(out)
}

pub fn fit_chain(index: &PointIndex, manifest: &SuiteManifest, req: &FitRequest) -> Result<FitChain> {
    let variant = req.variant;
    if variant.is_single_step() {
        let pts = direct_points(index, manifest, req)?;
        return Ok(FitChain::Direct {
            variant,
            fit: fit_single_step(&pts, variant)?,
        });
    }
    let loss = fit_loss_curve(&loss_points(index, manifest, req)?, variant)?;
    let mut link = fit_acc_curve(&link_points(index, manifest, req)?, variant.uses_helper(), variant.late_only())?;
    link.variant = variant;
    Ok(FitChain::TwoStep { variant, loss, link })
}

/// Run many independent fits in parallel. Results are in request order and
/// identical at any thread count.
pub fn fit_many(index: &PointIndex, manifest: &SuiteManifest, requests: &[FitRequest]) -> Vec<Result<FitChain>> {
    requests.par_iter().map(|r| fit_chain(index, manifest, r)).collect()
}
