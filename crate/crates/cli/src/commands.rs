use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use datapick::analysis::{
    emit_frontier, emit_noise, noise_spread, pareto_frontier, FrontierPoint, ReportFormat, ReportSet,
};
use datapick::fit::{fit_many, size_subsets, FitRequest, SizeSubset};
use datapick::ingest::{
    coverage_report, parse_item_records, parse_manifest, read_metric_points, write_item_records, write_metric_points,
    CellStatus,
};
use datapick::metrics::compute_all;
use datapick::synthetic::gen_suite;
use datapick::tables::{read_decisions, read_fits, read_predictions, write_decisions, write_fits, write_predictions, FitRecord};
use datapick::{
    decision_accuracy, gold_targets, predict_multi_scale, rank_single_scale, seed_attempts, target_flops, Error,
    FitChain, MethodDescriptor, MetricName, MetricPoint, PointIndex, Prediction, ScalePoint, SuiteManifest, TASK_LOSS,
};

use crate::{AnalyzeArgs, Common, DecideArgs, FitArgs, FrontierArgs, MetricsArgs, RankArgs, SimulateArgs, ValidateArgs};

fn load_manifest(path: &Path) -> Result<SuiteManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_manifest(&text).with_context(|| format!("manifest {}", path.display()))
}

fn load_points(path: &Path) -> Result<Vec<MetricPoint>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_metric_points(BufReader::new(f)).with_context(|| format!("metric points {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

impl Common {
    fn tasks(&self, m: &SuiteManifest) -> Vec<String> {
        if self.tasks.is_empty() {
            m.target.tasks.clone()
        } else {
            self.tasks.clone()
        }
    }

    fn metric(&self, m: &SuiteManifest) -> String {
        self.metric.clone().unwrap_or_else(|| m.target.metric.clone())
    }
}

/// Errors that mean "this combination has no usable data" rather than a
/// broken input.
fn is_skippable(e: &Error) -> bool {
    matches!(
        e,
        Error::InsufficientPoints { .. } | Error::MissingCells(_) | Error::Validation { .. } | Error::NotConverged(_)
    )
}

pub fn validate(a: ValidateArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let keys = if let Some(path) = &a.records {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let records = parse_item_records(BufReader::new(f)).with_context(|| format!("records {}", path.display()))?;
        let mut keys: Vec<_> = records.into_iter().map(|r| r.key).collect();
        keys.sort();
        keys.dedup();
        keys
    } else if let Some(path) = &a.points {
        PointIndex::new(&load_points(path)?).keys()
    } else {
        Vec::new()
    };
    println!(
        "manifest ok: {} sizes, {} recipes, {} seeds, target {}",
        m.ladder.len(),
        m.recipes.len(),
        m.seeds.len(),
        m.target.size
    );
    if a.records.is_none() && a.points.is_none() {
        return Ok(());
    }
    let report = coverage_report(&keys, &m);
    for c in report.flagged() {
        println!(
            "{}\t{}\t{}\t{}\tmax_step={}\tfraction={:.3}",
            c.recipe,
            c.size_label,
            c.seed,
            c.status.as_str(),
            c.max_step.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
            c.fraction_present
        );
    }
    println!(
        "complete={} early-stop={} truncated={} absent={}",
        report.count(CellStatus::Complete),
        report.count(CellStatus::EarlyStopConsistent),
        report.count(CellStatus::Truncated),
        report.count(CellStatus::Absent)
    );
    if !report.out_of_grid.is_empty() {
        for k in report.out_of_grid.iter().take(20) {
            eprintln!("out of grid: {}/{}/{} step {}", k.recipe, k.size_label, k.seed, k.step);
        }
        bail!("{} checkpoints fall outside the manifest grid", report.out_of_grid.len());
    }
    if a.strict && report.flagged().next().is_some() {
        bail!("{} runs are truncated or absent", report.flagged().count());
    }
    Ok(())
}

pub fn metrics(a: MetricsArgs) -> Result<()> {
    let f = File::open(&a.records).with_context(|| format!("opening {}", a.records.display()))?;
    let records = parse_item_records(BufReader::new(f)).with_context(|| format!("records {}", a.records.display()))?;
    let metrics: Vec<MetricName> = if a.metrics.is_empty() {
        MetricName::all()
    } else {
        a.metrics.iter().map(|s| s.parse()).collect::<datapick::Result<_>>()?
    };
    let points = compute_all(&records, &metrics, true)?;
    let mut w = create(&a.out)?;
    write_metric_points(&mut w, &points)?;
    w.flush()?;
    eprintln!("{} items -> {} points", records.len(), points.len());
    Ok(())
}

pub fn fit(a: FitArgs) -> Result<()> {
    let m = load_manifest(&a.common.manifest)?;
    let index = PointIndex::new(&load_points(&a.points)?);
    let tasks = a.common.tasks(&m);
    let metric = a.common.metric(&m);
    let ladder: Vec<String> = m
        .size_labels()
        .into_iter()
        .filter(|s| !a.exclude_target || *s != m.target.size)
        .collect();
    let variants = if a.variants.is_empty() {
        datapick::VariantSpec::ALL.to_vec()
    } else {
        a.variants.iter().map(|v| v.parse()).collect::<datapick::Result<_>>()?
    };
    let subsets = if a.subsets.is_empty() {
        size_subsets(&ladder)
    } else {
        a.subsets
            .iter()
            .map(|s| SizeSubset::parse(s, &ladder))
            .collect::<datapick::Result<_>>()?
    };
    let mut requests = Vec::new();
    for recipe in &m.recipes {
        for task in &tasks {
            for &variant in &variants {
                for subset in &subsets {
                    requests.push(FitRequest {
                        recipe: recipe.clone(),
                        task: task.clone(),
                        variant,
                        subset: subset.clone(),
                        seed: None,
                        loss_metric: TASK_LOSS.to_string(),
                        value_metric: metric.clone(),
                    });
                }
            }
        }
    }
    let mut fits = Vec::new();
    let mut skipped = 0usize;
    for (req, res) in requests.iter().zip(fit_many(&index, &m, &requests)) {
        match res {
            Ok(chain) => fits.push(FitRecord {
                recipe: req.recipe.clone(),
                task: req.task.clone(),
                metric: metric.clone(),
                subset: req.subset.clone(),
                chain,
            }),
            Err(e) if is_skippable(&e) => {
                skipped += 1;
                eprintln!(
                    "skip {} {} {} {}: {e}",
                    req.recipe,
                    req.task,
                    req.variant,
                    req.subset.label()
                );
            }
            Err(e) => return Err(e.into()),
        }
    }
    if fits.is_empty() {
        bail!("none of the {} requested fits could be run", requests.len());
    }
    let mut w = create(&a.out)?;
    write_fits(&mut w, &fits)?;
    w.flush()?;
    let unconverged = fits.iter().filter(|f| !f.chain.converged()).count();
    eprintln!("{} fits written ({} not converged), {} skipped", fits.len(), unconverged, skipped);
    Ok(())
}

pub fn rank(a: RankArgs) -> Result<()> {
    let m = load_manifest(&a.common.manifest)?;
    let index = PointIndex::new(&load_points(&a.points)?);
    let tasks = a.common.tasks(&m);
    let metric = a.common.metric(&m);
    let target_idx = m.size_index(&m.target.size)?;
    let sizes: Vec<String> = if a.sizes.is_empty() {
        m.size_labels().into_iter().take(target_idx).collect()
    } else {
        a.sizes.clone()
    };
    let mut preds = Vec::new();
    let mut skipped = 0usize;
    for size in &sizes {
        let cfg = m.size(size)?;
        let steps: Vec<u64> = if a.all_checkpoints {
            index
                .series(&m.recipes[0], size, m.default_seed(), &tasks[0], &metric)
                .map(|s| s.keys().copied().collect())
                .unwrap_or_default()
        } else {
            vec![a.step.unwrap_or(cfg.train_steps)]
        };
        for step in steps {
            for seed in &m.seeds {
                match rank_single_scale(&index, &m, size, step, seed, &metric, &tasks) {
                    Ok(p) => preds.push(p),
                    Err(Error::MissingCells(_)) => skipped += 1,
                    Err(e) => return Err(e.into()),
                }
            }
        }
    }
    if preds.is_empty() {
        bail!("no checkpoint had values for every recipe and task");
    }
    let mut w = create(&a.out)?;
    write_predictions(&mut w, &preds)?;
    w.flush()?;
    eprintln!("{} single-scale predictions written, {} seed/step cells missing", preds.len(), skipped);
    Ok(())
}

type FitGroups = BTreeMap<(datapick::VariantSpec, SizeSubset, String), BTreeMap<String, BTreeMap<String, FitChain>>>;

pub fn decide(a: DecideArgs) -> Result<()> {
    let m = load_manifest(&a.common.manifest)?;
    let index = PointIndex::new(&load_points(&a.points)?);
    let tasks = a.common.tasks(&m);
    let gold_metric = a.gold_metric.clone().unwrap_or_else(|| m.target.metric.clone());
    let wanted = |metric: &str| a.common.metric.as_deref().is_none_or(|w| w == metric);
    let gold = gold_targets(&index, &m, &gold_metric, &tasks).context("gold ranking")?;
    let mut reports = Vec::new();

    if let Some(path) = &a.predictions {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let preds = read_predictions(BufReader::new(f), target_flops(&m))?;
        let mut groups: Vec<(MethodDescriptor, Vec<Prediction>)> = Vec::new();
        for p in preds.into_iter().filter(|p| wanted(p.method.metric())) {
            let key = p.method.without_seed();
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, g)) => g.push(p),
                None => groups.push((key, vec![p])),
            }
        }
        for (_, g) in groups {
            reports.push(seed_attempts(&g, &gold)?);
        }
    }

    if let Some(path) = &a.fits {
        let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let mut groups: FitGroups = BTreeMap::new();
        for r in read_fits(BufReader::new(f))? {
            if !wanted(&r.metric) || !tasks.contains(&r.task) {
                continue;
            }
            groups
                .entry((r.chain.variant(), r.subset, r.metric))
                .or_default()
                .entry(r.recipe)
                .or_default()
                .insert(r.task, r.chain);
        }
        let target = {
            let t = m.target_config();
            ScalePoint::new(t.params(), t.tokens())
        };
        for ((variant, subset, metric), by_recipe) in groups {
            let incomplete: Vec<&String> = by_recipe
                .iter()
                .filter(|(_, per_task)| per_task.len() != tasks.len())
                .map(|(r, _)| r)
                .collect();
            if !incomplete.is_empty() {
                eprintln!("skip {variant} {}: recipes missing task fits: {incomplete:?}", subset.label());
                continue;
            }
            let chains: BTreeMap<String, Vec<FitChain>> = by_recipe
                .into_iter()
                .map(|(r, per_task)| (r, tasks.iter().map(|t| per_task[t].clone()).collect()))
                .collect();
            match predict_multi_scale(&chains, &subset, &metric, &m, target, a.best_effort) {
                Ok(pred) => reports.push(decision_accuracy(&pred, &gold)?),
                Err(e) if is_skippable(&e) => eprintln!("skip {variant} {}: {e}", subset.label()),
                Err(e) => return Err(e.into()),
            }
        }
    }

    if a.predictions.is_none() && a.fits.is_none() {
        bail!("nothing to decide: pass --predictions and/or --fits");
    }
    if reports.is_empty() {
        bail!("no method produced a complete prediction");
    }
    for r in &reports {
        println!(
            "{}\tdecision_accuracy={:.6}\tpairs={}\texcluded={}\tcompute={:.4e}\t({:.4}% of target)",
            r.method, r.decision_accuracy, r.n_pairs, r.n_excluded_pairs, r.budget.flops, r.budget.percent_of_target
        );
    }
    let mut w = create(&a.out)?;
    write_decisions(&mut w, &reports)?;
    w.flush()?;
    Ok(())
}

pub fn frontier(a: FrontierArgs) -> Result<()> {
    let f = File::open(&a.decisions).with_context(|| format!("opening {}", a.decisions.display()))?;
    let rows = read_decisions(BufReader::new(f))?;
    let points: Vec<FrontierPoint> = rows
        .iter()
        .map(|r| FrontierPoint {
            method: r.label(),
            flops: r.flops,
            decision_accuracy: r.decision_accuracy,
            std: r.da_std,
        })
        .collect();
    let mut metrics: Vec<&str> = rows.iter().map(|r| r.metric.as_str()).collect();
    metrics.sort_unstable();
    metrics.dedup();
    let metric = match metrics.as_slice() {
        [one] => one.to_string(),
        [] => "none".to_string(),
        _ => "mixed".to_string(),
    };
    for p in pareto_frontier(&points) {
        println!("{}\t{:.4e}\t{:.6}", p.method, p.flops, p.decision_accuracy);
    }
    let set = ReportSet {
        task: a.task,
        metric,
        frontier: points,
        ..Default::default()
    };
    for fmt in [ReportFormat::Table, ReportFormat::VectorPlot] {
        let p = emit_frontier(&set, fmt, &a.out_dir)?;
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

/// Seed-averaged single-scale decision accuracy on one task at the final step,
/// scored against the target metric.
fn single_task_accuracy(index: &PointIndex, m: &SuiteManifest, size: &str, task: &str, metric: &str) -> Option<f64> {
    let tasks = [task.to_string()];
    let gold = gold_targets(index, m, &m.target.metric, &tasks).ok()?;
    let step = m.size(size).ok()?.train_steps;
    let preds: Vec<Prediction> = m
        .seeds
        .iter()
        .filter_map(|seed| rank_single_scale(index, m, size, step, seed, metric, &tasks).ok())
        .collect();
    seed_attempts(&preds, &gold).ok().map(|r| r.decision_accuracy)
}

pub fn analyze(a: AnalyzeArgs) -> Result<()> {
    let m = load_manifest(&a.common.manifest)?;
    let index = PointIndex::new(&load_points(&a.points)?);
    let tasks = a.common.tasks(&m);
    let mut metrics = vec![a.common.metric(&m)];
    metrics.extend(a.extra_metrics.iter().cloned());
    let sizes = if a.sizes.is_empty() { m.size_labels() } else { a.sizes.clone() };
    let mut any = false;
    for task in &tasks {
        for metric in &metrics {
            let mut noise = Vec::new();
            for size in &sizes {
                match noise_spread(&index, &m, size, task, metric) {
                    Ok(mut p) => {
                        p.decision_accuracy = single_task_accuracy(&index, &m, size, task, metric);
                        println!(
                            "{task}\t{metric}\t{size}\tnoise={:.6}\tspread={:.6}\tdecision_accuracy={}",
                            p.noise,
                            p.spread,
                            p.decision_accuracy.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into())
                        );
                        noise.push(p);
                    }
                    Err(e) if is_skippable(&e) => eprintln!("skip {task} {metric} {size}: {e}"),
                    Err(e) => return Err(e.into()),
                }
            }
            any |= !noise.is_empty();
            let set = ReportSet {
                task: task.clone(),
                metric: metric.clone(),
                noise,
                ..Default::default()
            };
            for fmt in [ReportFormat::Table, ReportFormat::VectorPlot] {
                emit_noise(&set, fmt, &a.out_dir)?;
            }
        }
    }
    if !any {
        bail!("no size had enough fully trained seeds and recipes");
    }
    Ok(())
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let m = load_manifest(&a.manifest)?;
    let section = m
        .synthetic
        .as_ref()
        .ok_or_else(|| anyhow!("manifest {} has no [synthetic] section", a.manifest.display()))?;
    if section.truths.is_empty() {
        bail!("[synthetic] section declares no truths");
    }
    let mut cfg = section.config();
    if a.records_out.is_some() && cfg.items_per_task.is_none() {
        cfg.items_per_task = Some(1);
    }
    let suite = gen_suite(&section.truths, &m, &cfg, a.rng_seed)?;
    let mut w = create(&a.out)?;
    write_metric_points(&mut w, &suite.points)?;
    w.flush()?;
    if let (Some(path), Some(items)) = (&a.records_out, &suite.items) {
        let mut w = create(path)?;
        write_item_records(&mut w, items)?;
        w.flush()?;
        eprintln!("{} item records written", items.len());
    }
    eprintln!("{} metric points written", suite.points.len());
    Ok(())
}
