//! Gold target rankings, single- and multi-scale predictions, and scoring by
//! pairwise decision accuracy and prediction error.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::budget::{budget_of_prediction, BudgetReport, PredictionCost};
use crate::error::{Error, Result};
use crate::fit::{predict_at_target, FitChain, ScalePoint, SizeSubset, VariantSpec};
use crate::ingest::{PointIndex, SuiteManifest};
use crate::stats;

/// Seed-averaged target-scale value per recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRanking {
    pub metric: String,
    pub size_label: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodDescriptor {
    SingleScale {
        size: String,
        step: u64,
        metric: String,
        seed: String,
    },
    MultiScale {
        variant: VariantSpec,
        subset: String,
        metric: String,
    },
}

impl MethodDescriptor {
    pub fn kind(&self) -> &'static str {
        match self {
            MethodDescriptor::SingleScale { .. } => "single_scale",
            MethodDescriptor::MultiScale { variant, .. } => variant.as_str(),
        }
    }

    /// Size label (single scale) or subset label (multi scale).
    pub fn scale_label(&self) -> &str {
        match self {
            MethodDescriptor::SingleScale { size, .. } => size,
            MethodDescriptor::MultiScale { subset, .. } => subset,
        }
    }

    pub fn step(&self) -> Option<u64> {
        match self {
            MethodDescriptor::SingleScale { step, .. } => Some(*step),
            MethodDescriptor::MultiScale { .. } => None,
        }
    }

    pub fn metric(&self) -> &str {
        match self {
            MethodDescriptor::SingleScale { metric, .. } | MethodDescriptor::MultiScale { metric, .. } => metric,
        }
    }

    /// Same method with the seed erased, used to group seed attempts.
    pub fn without_seed(&self) -> MethodDescriptor {
        match self {
            MethodDescriptor::SingleScale { size, step, metric, .. } => MethodDescriptor::SingleScale {
                size: size.clone(),
                step: *step,
                metric: metric.clone(),
                seed: String::new(),
            },
            other => other.clone(),
        }
    }
}

impl fmt::Display for MethodDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodDescriptor::SingleScale { size, step, metric, seed } => {
                write!(f, "single_scale:{size}@{step}:{metric}")?;
                if !seed.is_empty() {
                    write!(f, ":{seed}")?;
                }
                Ok(())
            }
            MethodDescriptor::MultiScale { variant, subset, metric } => write!(f, "{variant}:{subset}:{metric}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub method: MethodDescriptor,
    pub values: BTreeMap<String, f64>,
    pub budget: BudgetReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOutcome {
    Correct,
    Incorrect,
    /// Gold values tie; the pair carries no decision.
    Excluded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub a: String,
    pub b: String,
    pub outcome: PairOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedStats {
    pub attempts: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 when only one attempt exists.
    pub std: f64,
    pub std_defined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub method: MethodDescriptor,
    pub decision_accuracy: f64,
    /// All unordered recipe pairs, R(R-1)/2.
    pub n_pairs: usize,
    pub n_excluded_pairs: usize,
    pub pairs: Vec<PairResult>,
    pub budget: BudgetReport,
    pub seed_stats: Option<SeedStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipeError {
    /// |predicted - actual| x 100 (points).
    pub absolute: f64,
    /// |predicted - actual| / actual x 100 (%); `None` when actual is 0.
    pub relative: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionErrorReport {
    pub per_recipe: BTreeMap<String, RecipeError>,
    pub mean_absolute: f64,
    pub mean_relative: Option<f64>,
    /// Recipes whose relative error is undefined.
    pub undefined_relative: Vec<String>,
}

fn macro_average(
    index: &PointIndex,
    recipe: &str,
    size: &str,
    seed: &str,
    tasks: &[String],
    metric: &str,
    step: Option<u64>,
    missing: &mut Vec<String>,
) -> Option<(u64, f64)> {
    let mut vals = Vec::with_capacity(tasks.len());
    let mut tokens = 0;
    for task in tasks {
        let found = match step {
            Some(s) => index.value_at(recipe, size, seed, task, metric, s),
            None => index
                .series(recipe, size, seed, task, metric)
                .and_then(|s| s.iter().next_back())
                .map(|(_, &tv)| tv),
        };
        match found {
            Some((tok, v)) => {
                tokens = tok;
                vals.push(v);
            }
            None => missing.push(format!(
                "{recipe}/{size}/{seed}/{task}/{metric}{}",
                step.map(|s| format!("@{s}")).unwrap_or_default()
            )),
        }
    }
    (vals.len() == tasks.len()).then(|| (tokens, stats::mean(&vals).expect("tasks nonempty")))
}

/// Per recipe: unweighted macro average over tasks at the final checkpoint
/// (max step) of each target-size run, then the mean over seeds.
pub fn gold_targets(
    index: &PointIndex,
    manifest: &SuiteManifest,
    metric: &str,
    tasks: &[String],
) -> Result<GoldRanking> {
    if tasks.is_empty() {
        return Err(Error::Empty("gold ranking needs at least one task".into()));
    }
    let size = &manifest.target.size;
    let mut missing = Vec::new();
    let mut values = BTreeMap::new();
    for recipe in &manifest.recipes {
        let per_seed: Vec<f64> = manifest
            .seeds
            .iter()
            .filter_map(|seed| macro_average(index, recipe, size, seed, tasks, metric, None, &mut missing))
            .map(|(_, v)| v)
            .collect();
        if per_seed.len() == manifest.seeds.len() {
            values.insert(recipe.clone(), stats::mean(&per_seed).expect("seeds nonempty"));
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    Ok(GoldRanking {
        metric: metric.to_string(),
        size_label: size.clone(),
        values,
    })
}

/// Rank recipes by their macro-averaged metric at one small-scale checkpoint.
pub fn rank_single_scale(
    index: &PointIndex,
    manifest: &SuiteManifest,
    size: &str,
    step: u64,
    seed: &str,
    metric: &str,
    tasks: &[String],
) -> Result<Prediction> {
    manifest.size(size)?;
    let mut missing = Vec::new();
    let mut values = BTreeMap::new();
    let mut tokens_seen = None;
    for recipe in &manifest.recipes {
        if let Some((tok, v)) = macro_average(index, recipe, size, seed, tasks, metric, Some(step), &mut missing) {
            tokens_seen.get_or_insert(tok);
            values.insert(recipe.clone(), v);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingCells(missing));
    }
    let tokens_seen = tokens_seen.ok_or_else(|| Error::Empty("no recipes in manifest".into()))?;
    let budget = budget_of_prediction(&PredictionCost::SingleScale { size, tokens_seen }, manifest)?;
    Ok(Prediction {
        method: MethodDescriptor::SingleScale {
            size: size.to_string(),
            step,
            metric: metric.to_string(),
            seed: seed.to_string(),
        },
        values,
        budget,
    })
}

/// Extrapolate each recipe's per-task chains to `target` and macro-average.
/// Every chain must share one variant; the budget is the full training cost
/// of the subset's sizes.
pub fn predict_multi_scale(
    chains: &BTreeMap<String, Vec<FitChain>>,
    subset: &SizeSubset,
    metric: &str,
    manifest: &SuiteManifest,
    target: ScalePoint,
    best_effort: bool,
) -> Result<Prediction> {
    let mut variant = None;
    let mut values = BTreeMap::new();
    for (recipe, per_task) in chains {
        if per_task.is_empty() {
            return Err(Error::Empty(format!("no fits for recipe {recipe}")));
        }
        let mut preds = Vec::with_capacity(per_task.len());
        for chain in per_task {
            match variant {
                None => variant = Some(chain.variant()),
                Some(v) if v != chain.variant() => {
                    return Err(Error::Mismatch(format!(
                        "mixed variants across recipes: {v} and {}",
                        chain.variant()
                    )))
                }
                _ => {}
            }
            preds.push(predict_at_target(chain, target, best_effort)?);
        }
        values.insert(recipe.clone(), stats::mean(&preds).expect("nonempty"));
    }
    let variant = variant.ok_or_else(|| Error::Empty("no fit chains".into()))?;
    let budget = budget_of_prediction(&PredictionCost::MultiScale { sizes: &subset.sizes }, manifest)?;
    Ok(Prediction {
        method: MethodDescriptor::MultiScale {
            variant,
            subset: subset.label(),
            metric: metric.to_string(),
        },
        values,
        budget,
    })
}

fn check_recipes(pred: &BTreeMap<String, f64>, gold: &BTreeMap<String, f64>) -> Result<()> {
    let p: BTreeSet<&String> = pred.keys().collect();
    let g: BTreeSet<&String> = gold.keys().collect();
    if p != g {
        return Err(Error::RecipeMismatch {
            only_pred: p.difference(&g).map(|s| s.to_string()).collect(),
            only_gold: g.difference(&p).map(|s| s.to_string()).collect(),
        });
    }
    Ok(())
}

/// Fraction of recipe pairs whose predicted order matches the gold order.
///
/// Gold ties are excluded (and counted); predicted ties count as incorrect.
pub fn decision_accuracy(pred: &Prediction, gold: &GoldRanking) -> Result<DecisionReport> {
    check_recipes(&pred.values, &gold.values)?;
    let recipes: Vec<(&String, f64, f64)> = gold
        .values
        .iter()
        .map(|(r, &g)| (r, pred.values[r], g))
        .collect();
    let mut pairs = Vec::new();
    let (mut correct, mut excluded) = (0usize, 0usize);
    for i in 0..recipes.len() {
        for j in i + 1..recipes.len() {
            let (ra, pa, ga) = recipes[i];
            let (rb, pb, gb) = recipes[j];
            let gold_sign = ga.partial_cmp(&gb).unwrap_or(Ordering::Equal);
            let pred_sign = pa.partial_cmp(&pb).unwrap_or(Ordering::Equal);
            let outcome = if gold_sign == Ordering::Equal {
                excluded += 1;
                PairOutcome::Excluded
            } else if pred_sign == gold_sign {
                correct += 1;
                PairOutcome::Correct
            } else {
                PairOutcome::Incorrect
            };
            pairs.push(PairResult {
                a: ra.clone(),
                b: rb.clone(),
                outcome,
            });
        }
    }
    let n_pairs = pairs.len();
    let decidable = n_pairs - excluded;
    if decidable == 0 {
        return Err(Error::validation(
            "decidable-pairs",
            format!("{} has no pairs with distinct gold values", pred.method),
        ));
    }
    Ok(DecisionReport {
        method: pred.method.clone(),
        decision_accuracy: correct as f64 / decidable as f64,
        n_pairs,
        n_excluded_pairs: excluded,
        pairs,
        budget: pred.budget,
        seed_stats: None,
    })
}

/// Mean and sample std of decision accuracy over repeated attempts (one per
/// seed). The returned report carries the first attempt's pair outcomes and
/// budget, with the seed erased from the method.
pub fn seed_attempts(preds: &[Prediction], gold: &GoldRanking) -> Result<DecisionReport> {
    let first = preds
        .first()
        .ok_or_else(|| Error::Empty("seed_attempts needs at least one attempt".into()))?;
    let reports = preds
        .iter()
        .map(|p| decision_accuracy(p, gold))
        .collect::<Result<Vec<_>>>()?;
    let attempts: Vec<f64> = reports.iter().map(|r| r.decision_accuracy).collect();
    let mean = stats::mean(&attempts).expect("nonempty");
    let std = stats::sample_std(&attempts);
    let mut out = reports.into_iter().next().expect("nonempty");
    out.method = first.method.without_seed();
    out.decision_accuracy = mean;
    out.seed_stats = Some(SeedStats {
        attempts,
        mean,
        std: std.unwrap_or(0.0),
        std_defined: std.is_some(),
    });
    Ok(out)
}

pub fn prediction_error(pred: &Prediction, gold: &GoldRanking) -> Result<PredictionErrorReport> {
    check_recipes(&pred.values, &gold.values)?;
    let mut per_recipe = BTreeMap::new();
    let mut undefined = Vec::new();
    for (r, &actual) in &gold.values {
        let diff = (pred.values[r] - actual).abs();
        let relative = if actual != 0.0 {
            Some(diff / actual.abs() * 100.0)
        } else {
            undefined.push(r.clone());
            None
        };
        per_recipe.insert(
            r.clone(),
            RecipeError {
                absolute: diff * 100.0,
                relative,
            },
        );
    }
    let abs: Vec<f64> = per_recipe.values().map(|e| e.absolute).collect();
    let rel: Vec<f64> = per_recipe.values().filter_map(|e| e.relative).collect();
    Ok(PredictionErrorReport {
        mean_absolute: stats::mean(&abs).unwrap_or(0.0),
        mean_relative: stats::mean(&rel),
        per_recipe,
        undefined_relative: undefined,
    })
}
