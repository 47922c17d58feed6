//! Training-compute accounting (FLOPs = 6ND) and budgets as a percentage of
//! the target model's training cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SuiteManifest;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub flops: f64,
    pub target_flops: f64,
    pub percent_of_target: f64,
}

impl BudgetReport {
    pub fn new(flops: f64, target_flops: f64) -> Result<Self> {
        Ok(Self {
            flops,
            target_flops,
            percent_of_target: percent_of_target(flops, target_flops)?,
        })
    }
}

/// Theoretical training FLOPs for `params` non-embedding parameters and `tokens` tokens.
pub fn flops(params: f64, tokens: f64) -> f64 {
    6.0 * params * tokens
}

pub fn percent_of_target(c: f64, target: f64) -> Result<f64> {
    if !(target > 0.0) {
        return Err(Error::validation(
            "target-budget-positive",
            format!("target budget must be > 0, got {target}"),
        ));
    }
    Ok(c / target * 100.0)
}

/// How a prediction spends compute.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictionCost<'a> {
    /// One run of `size` evaluated after `tokens_seen` tokens.
    SingleScale { size: &'a str, tokens_seen: u64 },
    /// Full training runs of every size in the subset.
    MultiScale { sizes: &'a [String] },
}

pub fn target_flops(manifest: &SuiteManifest) -> f64 {
    let t = manifest.target_config();
    flops(t.params(), t.tokens())
}

pub fn budget_of_prediction(cost: &PredictionCost<'_>, manifest: &SuiteManifest) -> Result<BudgetReport> {
    let c = match cost {
        PredictionCost::SingleScale { size, tokens_seen } => {
            let m = manifest.size(size)?;
            flops(m.params(), *tokens_seen as f64)
        }
        PredictionCost::MultiScale { sizes } => {
            let mut total = 0.0;
            for s in sizes.iter() {
                let m = manifest.size(s)?;
                total += flops(m.params(), m.tokens());
            }
            total
        }
    };
    BudgetReport::new(c, target_flops(manifest))
}
