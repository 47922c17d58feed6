//! CSV forms of fits, predictions and decision reports, so that workflow
//! steps can hand results to each other through files.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use crate::budget::BudgetReport;
use crate::decision::{DecisionReport, MethodDescriptor, Prediction};
use crate::error::{Error, Result};
use crate::fit::{FitChain, FitParams, FitResult, SizeSubset, SubsetKind, VariantSpec};
use crate::ingest::render_f64;

pub const FIT_HEADER: [&str; 12] = [
    "recipe",
    "task",
    "metric",
    "variant",
    "subset",
    "sizes",
    "stage",
    "params",
    "sse",
    "n_points",
    "converged",
    "n_restarts_used",
];

pub const PREDICTION_HEADER: [&str; 9] = [
    "method",
    "size/subset",
    "step",
    "seed",
    "metric",
    "recipe",
    "predicted",
    "flops",
    "percent_of_target",
];

pub const DECISION_HEADER: [&str; 10] = [
    "method",
    "size/subset",
    "step",
    "metric",
    "flops",
    "percent_of_target",
    "decision_accuracy",
    "da_std",
    "n_pairs",
    "n_excluded_pairs",
];

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    Error::parse(line, "csv", e)
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[&str]) -> Result<()> {
    let got = rdr.headers().map_err(csv_err)?;
    if got.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(Some(1), "header", format!("expected {}", expected.join(","))));
    }
    Ok(())
}

fn num<T: std::str::FromStr>(row: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    row.get(idx)
        .unwrap_or_default()
        .parse()
        .map_err(|e: T::Err| Error::parse(Some(line), name, e))
}

/// One fitted chain with its identifying fields.
#[derive(Debug, Clone, PartialEq)]
pub struct FitRecord {
    pub recipe: String,
    pub task: String,
    /// Series the chain predicts.
    pub metric: String,
    pub subset: SizeSubset,
    pub chain: FitChain,
}

fn render_params(p: &FitParams) -> String {
    let body: Vec<String> = p.named().iter().map(|(n, v)| format!("{n}={}", render_f64(*v))).collect();
    format!("{}:{}", p.form_name(), body.join(";"))
}

fn parse_params(s: &str, line: usize) -> Result<FitParams> {
    let (form, body) = s
        .split_once(':')
        .ok_or_else(|| Error::parse(Some(line), "params", "expected form:name=value;..."))?;
    let mut values = Vec::new();
    for kv in body.split(';').filter(|kv| !kv.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::parse(Some(line), "params", format!("bad entry `{kv}`")))?;
        let v: f64 = v.parse().map_err(|e| Error::parse(Some(line), "params", e))?;
        values.push((k.to_string(), v));
    }
    FitParams::from_named(form, &values)
}

pub fn write_fits<W: Write>(writer: W, fits: &[FitRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FIT_HEADER).map_err(csv_err)?;
    for f in fits {
        let stages: Vec<(&str, &FitResult)> = match &f.chain {
            FitChain::TwoStep { loss, link, .. } => vec![("loss", loss), ("link", link)],
            FitChain::Direct { fit, .. } => vec![("direct", fit)],
        };
        for (stage, r) in stages {
            w.write_record([
                f.recipe.as_str(),
                f.task.as_str(),
                f.metric.as_str(),
                f.chain.variant().as_str(),
                &f.subset.label(),
                &f.subset.sizes.join("|"),
                stage,
                &render_params(&r.params),
                &render_f64(r.sse),
                &r.n_points.to_string(),
                &r.converged.to_string(),
                &r.n_restarts_used.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_subset(label: &str, sizes: &str, line: usize) -> Result<SizeSubset> {
    let bad = || Error::parse(Some(line), "subset", format!("`{label}` is not prefix:k or suffix:k"));
    let (kind, k) = label.split_once(':').ok_or_else(bad)?;
    let kind = match kind {
        "prefix" => SubsetKind::Prefix,
        "suffix" => SubsetKind::Suffix,
        _ => return Err(bad()),
    };
    Ok(SizeSubset {
        kind,
        k: k.parse().map_err(|_| bad())?,
        sizes: sizes.split('|').filter(|s| !s.is_empty()).map(str::to_string).collect(),
    })
}

pub fn read_fits<R: Read>(reader: R) -> Result<Vec<FitRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &FIT_HEADER)?;
    let mut out: Vec<FitRecord> = Vec::new();
    let mut pending_loss: Option<((String, String, String, SizeSubset), FitResult)> = None;
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(Some(line), "row", e))?;
        let field = |idx: usize| row.get(idx).unwrap_or_default().to_string();
        let variant: VariantSpec = field(3).parse()?;
        let result = FitResult {
            variant,
            params: parse_params(&field(7), line)?,
            sse: num(&row, 8, "sse", line)?,
            n_points: num(&row, 9, "n_points", line)?,
            converged: num(&row, 10, "converged", line)?,
            n_restarts_used: num(&row, 11, "n_restarts_used", line)?,
        };
        let id = (field(0), field(1), field(2), parse_subset(&field(4), &field(5), line)?);
        let record = |(recipe, task, metric, subset): (String, String, String, SizeSubset), chain| FitRecord {
            recipe,
            task,
            metric,
            subset,
            chain,
        };
        match field(6).as_str() {
            "direct" => out.push(record(id, FitChain::Direct { variant, fit: result })),
            "loss" => pending_loss = Some((id, result)),
            "link" => {
                let (id, loss) = pending_loss
                    .take()
                    .filter(|(prev, _)| *prev == id)
                    .ok_or_else(|| Error::parse(Some(line), "stage", "link row without a preceding loss row"))?;
                out.push(record(
                    id,
                    FitChain::TwoStep {
                        variant,
                        loss,
                        link: result,
                    },
                ));
            }
            other => return Err(Error::parse(Some(line), "stage", format!("unknown stage `{other}`"))),
        }
    }
    if pending_loss.is_some() {
        return Err(Error::parse(None, "stage", "loss row without a link row at end of table"));
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(writer: W, preds: &[Prediction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PREDICTION_HEADER).map_err(csv_err)?;
    for p in preds {
        let seed = match &p.method {
            MethodDescriptor::SingleScale { seed, .. } => seed.as_str(),
            MethodDescriptor::MultiScale { .. } => "",
        };
        for (recipe, v) in &p.values {
            w.write_record([
                p.method.kind(),
                p.method.scale_label(),
                &p.method.step().map(|s| s.to_string()).unwrap_or_default(),
                seed,
                p.method.metric(),
                recipe.as_str(),
                &render_f64(*v),
                &render_f64(p.budget.flops),
                &render_f64(p.budget.percent_of_target),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read predictions back, grouped by method in first-appearance order.
pub fn read_predictions<R: Read>(reader: R, target_flops: f64) -> Result<Vec<Prediction>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &PREDICTION_HEADER)?;
    let mut order: Vec<MethodDescriptor> = Vec::new();
    let mut by_method: BTreeMap<MethodDescriptor, Prediction> = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(Some(line), "row", e))?;
        let field = |idx: usize| row.get(idx).unwrap_or_default().to_string();
        let method = if field(0) == "single_scale" {
            MethodDescriptor::SingleScale {
                size: field(1),
                step: num(&row, 2, "step", line)?,
                metric: field(4),
                seed: field(3),
            }
        } else {
            MethodDescriptor::MultiScale {
                variant: field(0).parse()?,
                subset: field(1),
                metric: field(4),
            }
        };
        let flops: f64 = num(&row, 7, "flops", line)?;
        let value: f64 = num(&row, 6, "predicted", line)?;
        let entry = by_method.entry(method.clone()).or_insert_with(|| {
            order.push(method.clone());
            Prediction {
                method,
                values: BTreeMap::new(),
                budget: BudgetReport {
                    flops,
                    target_flops,
                    percent_of_target: flops / target_flops * 100.0,
                },
            }
        });
        if entry.values.insert(field(5), value).is_some() {
            return Err(Error::Duplicate(format!("line {line}: recipe {} repeated for one method", field(5))));
        }
    }
    Ok(order.into_iter().map(|m| by_method.remove(&m).expect("present")).collect())
}

pub fn write_decisions<W: Write>(writer: W, reports: &[DecisionReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(DECISION_HEADER).map_err(csv_err)?;
    for r in reports {
        let std = r.seed_stats.as_ref().map_or(0.0, |s| s.std);
        w.write_record([
            r.method.kind(),
            r.method.scale_label(),
            &r.method.step().map(|s| s.to_string()).unwrap_or_default(),
            r.method.metric(),
            &render_f64(r.budget.flops),
            &render_f64(r.budget.percent_of_target),
            &render_f64(r.decision_accuracy),
            &render_f64(std),
            &r.n_pairs.to_string(),
            &r.n_excluded_pairs.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// A row of a decision table, as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRow {
    pub method: String,
    pub size_or_subset: String,
    pub step: Option<u64>,
    pub metric: String,
    pub flops: f64,
    pub percent_of_target: f64,
    pub decision_accuracy: f64,
    pub da_std: f64,
    pub n_pairs: usize,
    pub n_excluded_pairs: usize,
}

impl DecisionRow {
    pub fn label(&self) -> String {
        match self.step {
            Some(s) => format!("{}:{}@{}:{}", self.method, self.size_or_subset, s, self.metric),
            None => format!("{}:{}:{}", self.method, self.size_or_subset, self.metric),
        }
    }
}

pub fn read_decisions<R: Read>(reader: R) -> Result<Vec<DecisionRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    check_header(&mut rdr, &DECISION_HEADER)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::parse(Some(line), "row", e))?;
        let step = match row.get(2).unwrap_or_default() {
            "" => None,
            _ => Some(num(&row, 2, "step", line)?),
        };
        out.push(DecisionRow {
            method: row.get(0).unwrap_or_default().to_string(),
            size_or_subset: row.get(1).unwrap_or_default().to_string(),
            step,
            metric: row.get(3).unwrap_or_default().to_string(),
            flops: num(&row, 4, "flops", line)?,
            percent_of_target: num(&row, 5, "percent_of_target", line)?,
            decision_accuracy: num(&row, 6, "decision_accuracy", line)?,
            da_std: num(&row, 7, "da_std", line)?,
            n_pairs: num(&row, 8, "n_pairs", line)?,
            n_excluded_pairs: num(&row, 9, "n_excluded_pairs", line)?,
        });
    }
    Ok(out)
}
