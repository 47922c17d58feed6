//! Aggregated metric points and their CSV table form.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::records::CheckpointKey;

pub const METRIC_TABLE_HEADER: [&str; 8] =
    ["recipe", "size", "seed", "step", "tokens_seen", "task", "metric", "value"];

/// One aggregated (checkpoint, task, metric) value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub key: CheckpointKey,
    pub task: String,
    pub metric: String,
    pub value: f64,
}

/// Render a float so that parsing the text returns the identical value.
pub fn render_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn unique_key(p: &MetricPoint) -> (String, String, String, u64, String, String) {
    (
        p.key.recipe.clone(),
        p.key.size_label.clone(),
        p.key.seed.clone(),
        p.key.step,
        p.task.clone(),
        p.metric.clone(),
    )
}

pub fn write_metric_points<W: Write>(writer: W, points: &[MetricPoint]) -> Result<()> {
    let mut seen = HashSet::new();
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRIC_TABLE_HEADER).map_err(csv_err)?;
    for p in points {
        if !p.value.is_finite() {
            return Err(Error::NonFinite(format!("{:?} {} {}", p.key, p.task, p.metric)));
        }
        if !seen.insert(unique_key(p)) {
            return Err(Error::Duplicate(describe(p)));
        }
        w.write_record([
            p.key.recipe.as_str(),
            p.key.size_label.as_str(),
            p.key.seed.as_str(),
            &p.key.step.to_string(),
            &p.key.tokens_seen.to_string(),
            p.task.as_str(),
            p.metric.as_str(),
            &render_f64(p.value),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metric_points<R: Read>(reader: R) -> Result<Vec<MetricPoint>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != METRIC_TABLE_HEADER {
        return Err(Error::parse(
            Some(1),
            "header",
            format!("expected {}", METRIC_TABLE_HEADER.join(",")),
        ));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(Some(line), "row", e))?;
        let field = |idx: usize| row.get(idx).unwrap_or_default();
        let int = |idx: usize| -> Result<u64> {
            field(idx)
                .parse()
                .map_err(|e| Error::parse(Some(line), METRIC_TABLE_HEADER[idx], e))
        };
        let value: f64 = field(7)
            .parse()
            .map_err(|e| Error::parse(Some(line), "value", e))?;
        if !value.is_finite() {
            return Err(Error::parse(Some(line), "value", "value is not finite"));
        }
        let p = MetricPoint {
            key: CheckpointKey::new(field(0), field(1), field(2), int(3)?, int(4)?),
            task: field(5).to_string(),
            metric: field(6).to_string(),
            value,
        };
        if !seen.insert(unique_key(&p)) {
            return Err(Error::Duplicate(format!("line {line}: {}", describe(&p))));
        }
        out.push(p);
    }
    Ok(out)
}

fn describe(p: &MetricPoint) -> String {
    format!(
        "{}/{}/{}/step {}/{}/{}",
        p.key.recipe, p.key.size_label, p.key.seed, p.key.step, p.task, p.metric
    )
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    Error::parse(line, "csv", e)
}

type SeriesKey = (String, String, String, String, String);

/// Lookup structure over a set of metric points:
/// (recipe, size, seed, task, metric) -> step -> (tokens_seen, value).
#[derive(Debug, Default, Clone)]
pub struct PointIndex {
    series: BTreeMap<SeriesKey, BTreeMap<u64, (u64, f64)>>,
}

impl PointIndex {
    pub fn new(points: &[MetricPoint]) -> Self {
        let mut series: BTreeMap<SeriesKey, BTreeMap<u64, (u64, f64)>> = BTreeMap::new();
        for p in points {
            series
                .entry((
                    p.key.recipe.clone(),
                    p.key.size_label.clone(),
                    p.key.seed.clone(),
                    p.task.clone(),
                    p.metric.clone(),
                ))
                .or_default()
                .insert(p.key.step, (p.key.tokens_seen, p.value));
        }
        Self { series }
    }

    /// Step-ordered series for one run, task and metric.
    pub fn series(
        &self,
        recipe: &str,
        size: &str,
        seed: &str,
        task: &str,
        metric: &str,
    ) -> Option<&BTreeMap<u64, (u64, f64)>> {
        self.series.get(&(
            recipe.to_string(),
            size.to_string(),
            seed.to_string(),
            task.to_string(),
            metric.to_string(),
        ))
    }

    /// Value at the largest step of a run.
    pub fn final_value(&self, recipe: &str, size: &str, seed: &str, task: &str, metric: &str) -> Option<(u64, f64)> {
        self.series(recipe, size, seed, task, metric)
            .and_then(|s| s.iter().next_back())
            .map(|(&step, &(_, v))| (step, v))
    }

    pub fn value_at(
        &self,
        recipe: &str,
        size: &str,
        seed: &str,
        task: &str,
        metric: &str,
        step: u64,
    ) -> Option<(u64, f64)> {
        self.series(recipe, size, seed, task, metric)
            .and_then(|s| s.get(&step))
            .copied()
    }

    /// All checkpoint keys present, deduplicated.
    pub fn keys(&self) -> Vec<CheckpointKey> {
        let mut keys: Vec<CheckpointKey> = self
            .series
            .iter()
            .flat_map(|((r, s, seed, _, _), steps)| {
                steps
                    .iter()
                    .map(move |(&step, &(tok, _))| CheckpointKey::new(r.clone(), s.clone(), seed.clone(), step, tok))
            })
            .collect();
        keys.sort();
        keys.dedup();
        keys
    }
}
