//! Proxy metrics computed from per-choice log-likelihoods.
//!
//! Every metric is a mean over items of a per-item quantity built from the
//! choice "probabilities". Under length normalization the probability of a
//! choice is `exp(logprob / length)`, the per-unit geometric mean, which keeps
//! all five formulas bounded in every mode.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ingest::{CheckpointKey, ItemScoreRecord, MetricPoint};

/// Name of the per-character negative log-likelihood series used as the task
/// loss when fitting loss curves.
pub const TASK_LOSS: &str = "task_loss";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NormalizationMode {
    Raw,
    PerToken,
    PerChar,
}

impl NormalizationMode {
    pub const ALL: [NormalizationMode; 3] = [Self::Raw, Self::PerToken, Self::PerChar];

    fn suffix(self) -> &'static str {
        match self {
            Self::Raw => "",
            Self::PerToken => "_per_token",
            Self::PerChar => "_per_char",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricKind {
    CorrectProb,
    Margin,
    NormCorrectProb,
    TotalProb,
    Accuracy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        Self::CorrectProb,
        Self::Margin,
        Self::NormCorrectProb,
        Self::TotalProb,
        Self::Accuracy,
    ];

    fn stem(self) -> &'static str {
        match self {
            Self::CorrectProb => "correct_prob",
            Self::Margin => "margin",
            Self::NormCorrectProb => "norm_correct_prob",
            Self::TotalProb => "total_prob",
            Self::Accuracy => "accuracy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetricName {
    pub kind: MetricKind,
    pub mode: NormalizationMode,
}

impl MetricName {
    pub const fn new(kind: MetricKind, mode: NormalizationMode) -> Self {
        Self { kind, mode }
    }

    /// All 15 metric/normalization combinations.
    pub fn all() -> Vec<MetricName> {
        MetricKind::ALL
            .iter()
            .flat_map(|&k| NormalizationMode::ALL.iter().map(move |&m| MetricName::new(k, m)))
            .collect()
    }
}

impl Default for MetricName {
    fn default() -> Self {
        MetricName::new(MetricKind::CorrectProb, NormalizationMode::PerChar)
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.stem(), self.mode.suffix())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricName::all()
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::parse(None, "metric", format!("unknown metric `{s}`")))
    }
}

/// Probability of one choice under a normalization mode.
pub fn choice_prob(logprob_sum: f64, n_tokens: u32, n_chars: u32, mode: NormalizationMode) -> Result<f64> {
    Ok(normalized_logprob(logprob_sum, n_tokens, n_chars, mode)?.exp())
}

fn normalized_logprob(logprob_sum: f64, n_tokens: u32, n_chars: u32, mode: NormalizationMode) -> Result<f64> {
    let len = match mode {
        NormalizationMode::Raw => return Ok(logprob_sum),
        NormalizationMode::PerToken => n_tokens,
        NormalizationMode::PerChar => n_chars,
    };
    if len == 0 {
        return Err(Error::validation("lengths-positive", "choice length must be >= 1"));
    }
    Ok(logprob_sum / len as f64)
}

/// Per-item value of a metric.
pub fn item_value(record: &ItemScoreRecord, metric: MetricName) -> Result<f64> {
    let mut correct_score = None;
    let mut best_wrong_score = f64::NEG_INFINITY;
    let mut correct_p = 0.0;
    let mut best_wrong_p = f64::NEG_INFINITY;
    let mut total = 0.0;
    let mut scores = Vec::with_capacity(record.choices.len());
    for c in &record.choices {
        let score = normalized_logprob(c.logprob, c.tokens, c.chars, metric.mode)?;
        scores.push(score);
        let p = score.exp();
        total += p;
        if c.correct {
            correct_score = Some(score);
            correct_p = p;
        } else if score > best_wrong_score {
            best_wrong_score = score;
            best_wrong_p = p;
        }
    }
    let correct_score = correct_score
        .ok_or_else(|| Error::validation("exactly-one-correct", format!("item {} has no correct choice", record.item)))?;
    Ok(match metric.kind {
        MetricKind::CorrectProb => correct_p,
        MetricKind::Margin => correct_p - best_wrong_p,
        // Shifted by the best score so the ratio survives underflow of every exp.
        MetricKind::NormCorrectProb => {
            let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let shifted: f64 = scores.iter().map(|s| (s - top).exp()).sum();
            (correct_score - top).exp() / shifted
        }
        MetricKind::TotalProb => total,
        // Ties with the best incorrect choice score zero.
        MetricKind::Accuracy => {
            if correct_score > best_wrong_score {
                1.0
            } else {
                0.0
            }
        }
    })
}

fn check_group<'a>(records: &[&'a ItemScoreRecord]) -> Result<(&'a CheckpointKey, &'a str, Vec<&'a ItemScoreRecord>)> {
    let first = records
        .first()
        .ok_or_else(|| Error::Empty("metric needs at least one item".into()))?;
    if records.iter().any(|r| r.key != first.key || r.task != first.task) {
        return Err(Error::Mismatch(
            "compute_metric expects items from a single checkpoint and task".into(),
        ));
    }
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| a.item.cmp(&b.item));
    Ok((&first.key, &first.task, sorted))
}

/// Mean of a metric over the items of one (checkpoint, task).
pub fn compute_metric(records: &[&ItemScoreRecord], metric: MetricName) -> Result<MetricPoint> {
    let (key, task, sorted) = check_group(records)?;
    let mut sum = 0.0;
    for r in &sorted {
        sum += item_value(r, metric)?;
    }
    Ok(MetricPoint {
        key: key.clone(),
        task: task.to_string(),
        metric: metric.to_string(),
        value: sum / sorted.len() as f64,
    })
}

/// Mean per-character negative log-likelihood of the correct continuation.
pub fn compute_task_loss(records: &[&ItemScoreRecord]) -> Result<MetricPoint> {
    let (key, task, sorted) = check_group(records)?;
    let mut sum = 0.0;
    for r in &sorted {
        let c = r.correct_choice();
        sum += -c.logprob / c.chars as f64;
    }
    Ok(MetricPoint {
        key: key.clone(),
        task: task.to_string(),
        metric: TASK_LOSS.to_string(),
        value: sum / sorted.len() as f64,
    })
}

/// One point per (checkpoint, task, metric), plus the task loss when
/// `with_task_loss` is set. Output order is checkpoint, task, then metric order
/// as given, independent of input order and thread count.
pub fn compute_all(
    records: &[ItemScoreRecord],
    metrics: &[MetricName],
    with_task_loss: bool,
) -> Result<Vec<MetricPoint>> {
    let mut groups: BTreeMap<(&CheckpointKey, &str), Vec<&ItemScoreRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((&r.key, r.task.as_str())).or_default().push(r);
    }
    let groups: Vec<_> = groups.into_values().collect();
    let per_group: Vec<Result<Vec<MetricPoint>>> = groups
        .par_iter()
        .map(|items| {
            let mut pts = Vec::with_capacity(metrics.len() + 1);
            for &m in metrics {
                pts.push(compute_metric(items, m)?);
            }
            if with_task_loss {
                pts.push(compute_task_loss(items)?);
            }
            Ok(pts)
        })
        .collect();
    let mut out = Vec::new();
    for g in per_group {
        out.extend(g?);
    }
    Ok(out)
}
