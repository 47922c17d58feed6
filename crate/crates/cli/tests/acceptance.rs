//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any FAIL.
//!
//! Oracles live here, written independently of the library code they check.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use datapick::analysis::noise_spread;
use datapick::decision::{
    decision_accuracy, gold_targets, predict_multi_scale, rank_single_scale, seed_attempts, GoldRanking,
    MethodDescriptor, PairOutcome, Prediction,
};
use datapick::fit::{
    fit_acc_curve, fit_loss_curve, fit_many, fit_single_step, predict_at_target, smooth_final_loss, DirectPoint,
    FitRequest, LinkPoint, LossPoint, NdParams, PowerLawParams, SigmoidParams, SingleStepNdParams, SingleStepParams,
};
use datapick::ingest::{
    parse_item_records, parse_manifest, read_metric_points, write_item_records, write_metric_points, Choice,
};
use datapick::metrics::{item_value, MetricKind, NormalizationMode};
use datapick::synthetic::{gen_suite, keyed_normal, Crossover, GenConfig, GroundTruthRecipe, LossLaw};
use datapick::tables::{read_decisions, read_fits, write_fits, FitRecord};
use datapick::{
    flops, percent_of_target, target_flops, BudgetReport, CheckpointKey, FitChain, FitParams, ItemScoreRecord,
    MetricName, PointIndex, ScalePoint, SizeSubset, SuiteManifest, VariantSpec,
};

type Criterion = fn() -> Result<String>;

fn main() {
    let criteria: [(&str, Duration, Criterion); 10] = [
        ("flops anchor", secs(1), flops_anchor),
        ("proxy-metric fixtures", secs(1), proxy_metric_fixtures),
        ("fit recovery", secs(10), fit_recovery),
        ("decision-accuracy oracle", secs(1), decision_accuracy_oracle),
        ("monotone-transform invariance", secs(1), monotone_invariance),
        ("noiseless end-to-end", secs(30), noiseless_end_to_end),
        ("helper point", secs(5), helper_point),
        ("smoothing rule", secs(1), smoothing_rule),
        ("round-trip and determinism", secs(10), round_trip_and_determinism),
        ("noise recovery", secs(30), noise_recovery),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(*check).unwrap_or_else(|_| Err(anyhow::anyhow!("panicked")));
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > *limit => Err(anyhow::anyhow!("{detail}; exceeded {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}; {took:.2?})", i + 1),
            Err(e) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({e:#}; {took:.2?})", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

fn workspace_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn load_manifest(rel: &str) -> Result<SuiteManifest> {
    let path = workspace_file(rel);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_manifest(&text)?)
}

fn datapick(args: &[&str]) -> Result<Output> {
    let out = Command::new(env!("CARGO_BIN_EXE_datapick"))
        .args(args)
        .output()
        .context("spawning datapick")?;
    if !out.status.success() {
        bail!(
            "datapick {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        );
    }
    Ok(out)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

fn rel_err(got: f64, want: f64) -> f64 {
    ((got - want) / want).abs()
}

// 1

fn flops_anchor() -> Result<String> {
    let c = flops(1.1768e9, 1.0e11);
    ensure!(rel_err(c, 7.0608e20) < 1e-12, "flops(1.1768e9, 1e11) = {c:e}");
    let ladder = load_manifest("configs/ladder.toml")?;
    let small = ladder.size("10M")?;
    let pct = percent_of_target(flops(small.params(), small.tokens()), target_flops(&ladder))?;
    ensure!((0.005..=0.015).contains(&pct), "10M run is {pct}% of the 1B target");
    Ok(format!("C = {c:.4e}, 10M = {pct:.4}% of target"))
}

// 2

fn choice(logprob: f64, tokens: u32, chars: u32, correct: bool) -> Choice {
    Choice {
        logprob,
        tokens,
        chars,
        correct,
    }
}

fn record(item: &str, choices: Vec<Choice>) -> ItemScoreRecord {
    ItemScoreRecord {
        key: CheckpointKey::new("r", "10M", "default", 1, 1),
        task: "t".into(),
        item: item.into(),
        choices,
    }
}

fn proxy_metric_fixtures() -> Result<String> {
    // Correct choice first in every item.
    let items = vec![
        record(
            "a",
            vec![choice(-2.0, 2, 8, true), choice(-3.0, 3, 2, false), choice(-1.5, 1, 3, false)],
        ),
        record("b", vec![choice(-0.5, 1, 2, true), choice(-4.0, 2, 8, false)]),
        record(
            "c",
            vec![
                choice(-6.0, 3, 12, true),
                choice(-5.0, 5, 10, false),
                choice(-9.0, 3, 9, false),
                choice(-8.0, 4, 4, false),
            ],
        ),
    ];
    // Normalized log-scores worked out by hand, per mode.
    let scores: [(NormalizationMode, [&[f64]; 3]); 3] = [
        (NormalizationMode::Raw, [&[-2.0, -3.0, -1.5], &[-0.5, -4.0], &[-6.0, -5.0, -9.0, -8.0]]),
        (NormalizationMode::PerToken, [&[-1.0, -1.0, -1.5], &[-0.5, -2.0], &[-2.0, -1.0, -3.0, -2.0]]),
        (NormalizationMode::PerChar, [&[-0.25, -1.5, -0.5], &[-0.25, -0.5], &[-0.5, -0.5, -1.0, -2.0]]),
    ];
    let accuracy = [(NormalizationMode::Raw, 1.0 / 3.0), (NormalizationMode::PerToken, 1.0 / 3.0), (NormalizationMode::PerChar, 2.0 / 3.0)];
    let refs: Vec<&ItemScoreRecord> = items.iter().collect();
    let mut checked = 0;
    for (mode, per_item) in scores {
        let probs: Vec<Vec<f64>> = per_item.iter().map(|s| s.iter().map(|x| x.exp()).collect()).collect();
        let mean = |f: &dyn Fn(&[f64]) -> f64| probs.iter().map(|p| f(p)).sum::<f64>() / probs.len() as f64;
        let best_wrong = |p: &[f64]| p[1..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expected = [
            (MetricKind::CorrectProb, mean(&|p| p[0])),
            (MetricKind::Margin, mean(&|p| p[0] - best_wrong(p))),
            (MetricKind::NormCorrectProb, mean(&|p| p[0] / p.iter().sum::<f64>())),
            (MetricKind::TotalProb, mean(&|p| p.iter().sum::<f64>())),
            (MetricKind::Accuracy, accuracy.iter().find(|(m, _)| *m == mode).unwrap().1),
        ];
        for (kind, want) in expected {
            let metric = MetricName::new(kind, mode);
            let got = datapick::metrics::compute_metric(&refs, metric)?.value;
            ensure!((got - want).abs() <= 1e-12, "{metric}: {got} vs hand value {want}");
            checked += 1;
        }
    }

    let mut rng = StdRng::seed_from_u64(2);
    let norm_raw = MetricName::new(MetricKind::NormCorrectProb, NormalizationMode::Raw);
    let norm_char = MetricName::new(MetricKind::NormCorrectProb, NormalizationMode::PerChar);
    let acc = |mode| MetricName::new(MetricKind::Accuracy, mode);
    for n in 0..1000 {
        let k = rng.random_range(2..=6);
        let correct = rng.random_range(0..k);
        let choices: Vec<Choice> = (0..k)
            .map(|c| {
                let tokens = rng.random_range(1..=10);
                choice(rng.random_range(-30.0..-0.01), tokens, rng.random_range(tokens..=4 * tokens), c == correct)
            })
            .collect();
        let item = record(&format!("i{n}"), choices);
        // Probabilities times c: raw log-scores shift by ln c, per-char ones too.
        let ln_c = rng.random_range(0.01f64..1.0).ln();
        let mut raw_scaled = item.clone();
        let mut char_scaled = item.clone();
        for (r, ch) in raw_scaled.choices.iter_mut().zip(char_scaled.choices.iter_mut()) {
            r.logprob += ln_c;
            ch.logprob += ln_c * ch.chars as f64;
        }
        for (scaled, m) in [(&raw_scaled, norm_raw), (&char_scaled, norm_char)] {
            let (a, b) = (item_value(&item, m)?, item_value(scaled, m)?);
            ensure!((a - b).abs() <= 1e-12, "{m} moved under scaling: {a} vs {b}");
        }
        ensure!(
            item_value(&item, acc(NormalizationMode::Raw))? == item_value(&raw_scaled, acc(NormalizationMode::Raw))?,
            "raw accuracy moved under scaling"
        );
        ensure!(
            item_value(&item, acc(NormalizationMode::PerChar))?
                == item_value(&char_scaled, acc(NormalizationMode::PerChar))?,
            "per-char accuracy moved under scaling"
        );
        // Equal lengths across choices: normalized argmax is the raw argmax.
        let mut same_len = item.clone();
        let (t, ch) = (rng.random_range(1..=10), rng.random_range(1..=40));
        for c in &mut same_len.choices {
            c.tokens = t;
            c.chars = ch;
        }
        let raw_acc = item_value(&same_len, acc(NormalizationMode::Raw))?;
        for mode in [NormalizationMode::PerToken, NormalizationMode::PerChar] {
            ensure!(item_value(&same_len, acc(mode))? == raw_acc, "{} differs from raw", acc(mode));
        }
    }
    Ok(format!("{checked} fixture values, 1000 random items"))
}

// 3

fn ladder_scales() -> Vec<ScalePoint> {
    [4e6, 2e7, 6e7, 1.5e8, 3e8, 5.3e8, 7.5e8]
        .iter()
        .map(|&n| ScalePoint::new(n, 20.0 * n))
        .collect()
}

fn nd_grid() -> Vec<ScalePoint> {
    let mut out = Vec::new();
    for &n in &[1e7, 4e7, 1.5e8, 5e8] {
        for &d in &[2e9, 1e10, 5e10] {
            out.push(ScalePoint::new(n, d));
        }
    }
    out
}

fn through_helper(a: f64, k: f64, l0: f64) -> SigmoidParams {
    let at_zero = a / (1.0 + (k * l0).exp());
    SigmoidParams {
        a,
        b: 1.0 - at_zero,
        k,
        l0,
    }
}

fn params_close(variant: VariantSpec, got: &FitParams, want: &FitParams) -> Result<()> {
    for ((name, g), (_, w)) in got.named().into_iter().zip(want.named()) {
        let err = if w == 0.0 { g.abs() } else { rel_err(g, w) };
        ensure!(err <= 1e-3, "{variant} {name}: fitted {g}, true {w}");
    }
    Ok(())
}

fn recover_two_step(
    variant: VariantSpec,
    scales: &[ScalePoint],
    law: FitParams,
    link: SigmoidParams,
    target: ScalePoint,
) -> Result<()> {
    let loss_at = |s: ScalePoint| match law {
        FitParams::PowerLaw(p) => p.loss(s.compute()),
        FitParams::Nd(p) => p.loss(s),
        _ => unreachable!(),
    };
    let loss_pts: Vec<LossPoint> = scales.iter().map(|&s| LossPoint { scale: s, loss: loss_at(s) }).collect();
    let link_pts: Vec<LinkPoint> = scales
        .iter()
        .flat_map(|s| {
            (1..=8u64).map(move |i| {
                let l = loss_at(ScalePoint::new(s.params, s.tokens * i as f64 / 8.0));
                LinkPoint {
                    loss: l,
                    value: link.value(l),
                    step: i,
                    final_step: 8,
                }
            })
        })
        .collect();
    let loss = fit_loss_curve(&loss_pts, variant)?;
    let link_fit = fit_acc_curve(&link_pts, variant.uses_helper(), variant.late_only())?;
    params_close(variant, &loss.params, &law)?;
    let FitParams::Sigmoid(s) = link_fit.params else { bail!("{variant}: link is not a sigmoid") };
    params_close(variant, &FitParams::Sigmoid(s.canonical()), &FitParams::Sigmoid(link.canonical()))?;
    let chain = FitChain::TwoStep {
        variant,
        loss,
        link: link_fit,
    };
    let pred = predict_at_target(&chain, target, false)?;
    let truth = link.value(loss_at(target));
    ensure!((pred - truth).abs() <= 1e-3, "{variant}: predicted {pred}, true {truth}");
    Ok(())
}

fn recover_direct(variant: VariantSpec, pts: &[DirectPoint], truth: FitParams, at_target: f64, target: ScalePoint) -> Result<()> {
    let fit = fit_single_step(pts, variant)?;
    params_close(variant, &fit.params, &truth)?;
    let pred = predict_at_target(&FitChain::Direct { variant, fit }, target, false)?;
    ensure!((pred - at_target).abs() <= 1e-3, "{variant}: predicted {pred}, true {at_target}");
    Ok(())
}

fn fit_recovery() -> Result<String> {
    let target = ScalePoint::new(1e9, 2e10);
    let power = FitParams::PowerLaw(PowerLawParams {
        a: 180.0,
        alpha: 0.11,
        e: 1.4,
    });
    let link = SigmoidParams {
        a: 0.6,
        b: 0.25,
        k: -4.0,
        l0: 2.6,
    };
    let helper = through_helper(0.7, -3.0, 2.4);
    recover_two_step(VariantSpec::ThreeParam, &ladder_scales(), power, link, target)?;
    recover_two_step(VariantSpec::ThreeParamLate, &ladder_scales(), power, link, target)?;
    recover_two_step(VariantSpec::ThreeParamHelper, &ladder_scales(), power, helper, target)?;
    recover_two_step(VariantSpec::ThreeParamHelperLate, &ladder_scales(), power, helper, target)?;
    let two = FitParams::PowerLaw(PowerLawParams {
        a: 60.0,
        alpha: 0.07,
        e: 0.0,
    });
    recover_two_step(VariantSpec::TwoParam, &ladder_scales(), two, link, target)?;
    let nd = FitParams::Nd(NdParams {
        a: 400.0,
        alpha: 0.34,
        b: 1800.0,
        beta: 0.28,
        e: 1.7,
    });
    recover_two_step(VariantSpec::FiveParamNd, &nd_grid(), nd, link, target)?;

    let ss3 = SingleStepParams {
        big_a: -1200.0,
        alpha: 0.16,
        e: 2.2,
        a: 0.55,
        b: 0.28,
    };
    let pts: Vec<DirectPoint> = ladder_scales()
        .iter()
        .flat_map(|s| {
            (1..=6).map(move |i| {
                let at = ScalePoint::new(s.params, s.tokens * i as f64 / 6.0);
                DirectPoint {
                    scale: at,
                    value: ss3.value(at.compute()),
                }
            })
        })
        .collect();
    recover_direct(VariantSpec::SingleStep3, &pts, FitParams::SingleStep(ss3), ss3.value(target.compute()), target)?;

    let ss5 = SingleStepNdParams {
        big_a: -90.0,
        alpha: 0.3,
        big_b: -700.0,
        beta: 0.32,
        e: 3.0,
        a: 0.6,
        b: 0.22,
    };
    let pts: Vec<DirectPoint> = nd_grid()
        .iter()
        .map(|&s| DirectPoint {
            scale: s,
            value: ss5.value(s),
        })
        .collect();
    recover_direct(VariantSpec::SingleStep5, &pts, FitParams::SingleStepNd(ss5), ss5.value(target), target)?;
    Ok("8 variants within 1e-3".into())
}

// 4

fn prediction(values: BTreeMap<String, f64>) -> Prediction {
    Prediction {
        method: MethodDescriptor::SingleScale {
            size: "10M".into(),
            step: 100,
            metric: "accuracy".into(),
            seed: "default".into(),
        },
        values,
        budget: BudgetReport::new(1.0, 1000.0).expect("positive target"),
    }
}

fn gold(values: BTreeMap<String, f64>) -> GoldRanking {
    GoldRanking {
        metric: "accuracy".into(),
        size_label: "1B".into(),
        values,
    }
}

fn named(values: &[f64]) -> BTreeMap<String, f64> {
    values.iter().enumerate().map(|(i, &v)| (format!("r{i:02}"), v)).collect()
}

fn decision_accuracy_oracle() -> Result<String> {
    let mut rng = StdRng::seed_from_u64(4);
    let mut enumerated = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..=6);
        // Small integer values so ties show up on both sides.
        let pv: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let gv: Vec<f64> = (0..n).map(|_| rng.random_range(0..4) as f64).collect();
        let (mut correct, mut decidable) = (0, 0);
        for i in 0..n {
            for j in 0..n {
                if i < j && gv[i] != gv[j] {
                    decidable += 1;
                    if (pv[i] > pv[j]) == (gv[i] > gv[j]) && pv[i] != pv[j] {
                        correct += 1;
                    }
                }
            }
        }
        let got = decision_accuracy(&prediction(named(&pv)), &gold(named(&gv)));
        if decidable == 0 {
            ensure!(got.is_err(), "all-tied gold should have no decidable pairs");
            continue;
        }
        let r = got?;
        ensure!(r.n_pairs == n * (n - 1) / 2, "n_pairs {} for {n} recipes", r.n_pairs);
        ensure!(r.n_pairs - r.n_excluded_pairs == decidable, "excluded pair count");
        ensure!(
            r.decision_accuracy == correct as f64 / decidable as f64,
            "{} vs enumerated {correct}/{decidable}",
            r.decision_accuracy
        );
        enumerated += 1;
    }
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(3..=15);
        let pv: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let gv: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let mut s = 0i64;
        for i in 0..n {
            for j in i + 1..n {
                s += ((pv[i] - pv[j]).signum() * (gv[i] - gv[j]).signum()) as i64;
            }
        }
        let tau = s as f64 / (n * (n - 1) / 2) as f64;
        let da = decision_accuracy(&prediction(named(&pv)), &gold(named(&gv)))?.decision_accuracy;
        worst = worst.max((da - (tau + 1.0) / 2.0).abs());
    }
    ensure!(worst <= 1e-12, "DA vs (tau+1)/2 off by {worst:e}");
    Ok(format!("{enumerated} enumerated suites, max |DA - (tau+1)/2| = {worst:e}"))
}

// 5

fn monotone_invariance() -> Result<String> {
    let mut rng = StdRng::seed_from_u64(5);
    let transforms: [(&str, fn(f64) -> f64); 2] = [("2x+1", |x| 2.0 * x + 1.0), ("exp", f64::exp)];
    for _ in 0..100 {
        let n = rng.random_range(2..=12);
        let g = gold(named(&(0..n).map(|_| rng.random_range(0..5) as f64).collect::<Vec<_>>()));
        if g.values.values().all(|v| *v == g.values["r00"]) {
            continue;
        }
        let attempts: Vec<Prediction> = (0..3)
            .map(|_| prediction(named(&(0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>())))
            .collect();
        let base = decision_accuracy(&attempts[0], &g)?;
        let base_seeds = seed_attempts(&attempts, &g)?;
        for (name, f) in transforms {
            let moved: Vec<Prediction> = attempts
                .iter()
                .map(|p| Prediction {
                    values: p.values.iter().map(|(k, v)| (k.clone(), f(*v))).collect(),
                    ..p.clone()
                })
                .collect();
            ensure!(decision_accuracy(&moved[0], &g)? == base, "report changed under {name}");
            ensure!(seed_attempts(&moved, &g)? == base_seeds, "seed report changed under {name}");
        }
    }
    Ok("100 suites under 2x+1 and exp".into())
}

// 6

fn noiseless_end_to_end() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let manifest = workspace_file("configs/synthetic_noiseless.toml");
    let points = dir.path().join("points.csv");
    let fits = dir.path().join("fits.csv");
    let decisions = dir.path().join("decisions.csv");
    datapick(&["simulate", "--manifest", p(&manifest), "--out", p(&points)])?;
    datapick(&[
        "fit",
        "--manifest",
        p(&manifest),
        "--points",
        p(&points),
        "--out",
        p(&fits),
        "--variant",
        "three_param",
        "--subset",
        "prefix:5",
        "--exclude-target",
    ])?;
    datapick(&[
        "decide",
        "--manifest",
        p(&manifest),
        "--points",
        p(&points),
        "--fits",
        p(&fits),
        "--out",
        p(&decisions),
    ])?;
    let rows = read_decisions(std::fs::File::open(&decisions)?)?;
    ensure!(rows.len() == 1, "expected one decision row, got {}", rows.len());
    ensure!(
        rows[0].decision_accuracy == 1.0 && rows[0].n_pairs == 45,
        "{}: accuracy {} over {} pairs",
        rows[0].label(),
        rows[0].decision_accuracy,
        rows[0].n_pairs
    );
    let (single, multi) = crossover_case()?;
    Ok(format!(
        "CLI three_param accuracy 1.0; crossover pair: single-scale {single:.2}, multi-scale {multi:.2}"
    ))
}

/// Recipe `late` crosses `early` between the largest experiment and the target.
/// Returns the mean single-scale accuracy on that pair and the multi-scale one.
fn crossover_case() -> Result<(f64, f64)> {
    let mut m = load_manifest("configs/synthetic_noiseless.toml")?;
    let link = SigmoidParams {
        a: 0.6,
        b: 0.25,
        k: -3.0,
        l0: 2.6,
    };
    let power = |a, alpha, e| LossLaw::Power(PowerLawParams { a, alpha, e });
    let largest = m.ladder[m.ladder.len() - 2].clone();
    let cross_at = 3.0 * flops(largest.params(), largest.tokens());
    ensure!(cross_at < target_flops(&m), "crossover must fall below the target");
    let truths = vec![
        GroundTruthRecipe {
            recipe: "early".into(),
            loss: power(600.0, 0.15, 1.40),
            link,
            noise_sigma: 0.0,
            crossover: None,
        },
        GroundTruthRecipe {
            recipe: "late".into(),
            loss: power(1.0, 0.2, 1.30),
            link,
            noise_sigma: 0.0,
            crossover: Some(Crossover {
                of: "early".into(),
                compute: cross_at,
            }),
        },
        GroundTruthRecipe {
            recipe: "weak".into(),
            loss: power(700.0, 0.15, 1.60),
            link,
            noise_sigma: 0.0,
            crossover: None,
        },
    ];
    m.recipes = truths.iter().map(|t| t.recipe.clone()).collect();
    let cfg = GenConfig {
        checkpoints_per_run: 8,
        truncate_non_default_seeds: None,
        items_per_task: None,
    };
    let suite = gen_suite(&truths, &m, &cfg, 0)?;
    let index = PointIndex::new(&suite.points);
    let metric = m.target.metric.clone();
    let tasks = m.target.tasks.clone();
    let g = gold_targets(&index, &m, &metric, &tasks)?;
    ensure!(g.values["late"] > g.values["early"], "late recipe must win at the target");

    let pair = |pred: &Prediction| -> Result<f64> {
        let r = decision_accuracy(pred, &g)?;
        let hit = r.pairs.iter().find(|p| p.a == "early" && p.b == "late").expect("pair present");
        Ok(if hit.outcome == PairOutcome::Correct { 1.0 } else { 0.0 })
    };
    let small: Vec<String> = m.size_labels()[..m.ladder.len() - 1].to_vec();
    let mut single = Vec::new();
    for size in &small[..3] {
        let steps = m.size(size)?.train_steps;
        single.push(pair(&rank_single_scale(&index, &m, size, steps, m.default_seed(), &metric, &tasks)?)?);
    }
    let single = single.iter().sum::<f64>() / single.len() as f64;
    ensure!(single < 1.0, "single-scale ranking at small sizes got the crossing pair right");

    let subset = SizeSubset::parse("prefix:5", &small)?;
    let requests: Vec<FitRequest> = m
        .recipes
        .iter()
        .flat_map(|r| {
            tasks.iter().map(|t| FitRequest {
                recipe: r.clone(),
                task: t.clone(),
                variant: VariantSpec::ThreeParam,
                subset: subset.clone(),
                seed: None,
                loss_metric: datapick::TASK_LOSS.into(),
                value_metric: metric.clone(),
            })
        })
        .collect();
    let mut chains: BTreeMap<String, Vec<FitChain>> = BTreeMap::new();
    for (req, chain) in requests.iter().zip(fit_many(&index, &m, &requests)) {
        chains.entry(req.recipe.clone()).or_default().push(chain?);
    }
    let target = m.target_config();
    let at = ScalePoint::new(target.params(), target.tokens());
    let multi_pred = predict_multi_scale(&chains, &subset, &metric, &m, at, false)?;
    let multi = pair(&multi_pred)?;
    ensure!(multi == 1.0, "multi-scale fit missed the crossover");
    ensure!(decision_accuracy(&multi_pred, &g)?.decision_accuracy == 1.0, "multi-scale accuracy below 1");
    Ok((single, multi))
}

// 7

fn helper_point() -> Result<String> {
    let truth = through_helper(0.75, -2.5, 2.2);
    // Only the high-loss tail, where accuracy sits near its floor.
    let losses: Vec<f64> = (0..40).map(|i| 2.8 + 1.7 * i as f64 / 39.0).collect();
    let (mut with, mut without, mut wins) = (0.0, 0.0, 0);
    let draws = 20;
    for draw in 0..draws {
        let pts: Vec<LinkPoint> = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let key = CheckpointKey::new("helper", "x", "default", i as u64, 0);
                LinkPoint {
                    loss: l,
                    value: truth.value(l) + 0.005 * keyed_normal(draw, &key, "t"),
                    step: i as u64 + 1,
                    final_step: losses.len() as u64,
                }
            })
            .collect();
        let at_zero = |helpers| -> Result<f64> {
            let FitParams::Sigmoid(s) = fit_acc_curve(&pts, helpers, false)?.params else { bail!("link form") };
            Ok((s.value(0.0) - truth.value(0.0)).abs())
        };
        let (h, n) = (at_zero(true)?, at_zero(false)?);
        with += h;
        without += n;
        if h < n {
            wins += 1;
        }
    }
    let (with, without) = (with / draws as f64, without / draws as f64);
    ensure!(with < without, "helper error {with:.4} is not below helper-free error {without:.4}");
    Ok(format!(
        "mean |error| at L=0: helper {with:.4}, no helper {without:.4}; helper better in {wins}/{draws} draws"
    ))
}

// 8

fn smoothing_rule() -> Result<String> {
    let series: Vec<(u64, f64)> = (1..=10).map(|i| (10 * i, 10.0 * i as f64)).collect();
    let v = smooth_final_loss(&series)?;
    ensure!(v == 95.0, "smoothed {v}");
    Ok("95".into())
}

// 9

fn round_trip_and_determinism() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let mut m = load_manifest("configs/synthetic_noiseless.toml")?;
    let syn = m.synthetic.as_mut().context("synthetic section")?;
    for t in &mut syn.truths {
        t.noise_sigma = 0.01;
    }
    let manifest = dir.path().join("noisy.toml");
    std::fs::write(&manifest, datapick::ingest::write_manifest(&m)?)?;

    // Library round-trips.
    let truths = &m.synthetic.as_ref().expect("set above").truths;
    let suite = gen_suite(truths, &m, &m.synthetic.as_ref().expect("set above").config(), 9)?;
    let mut buf = Vec::new();
    write_metric_points(&mut buf, &suite.points)?;
    ensure!(read_metric_points(buf.as_slice())? == suite.points, "metric points round-trip");
    let items = suite.items.as_ref().context("items")?;
    let mut buf = Vec::new();
    write_item_records(&mut buf, items)?;
    ensure!(&parse_item_records(buf.as_slice())? == items, "item records round-trip");

    let run = |jobs: &str, tag: &str| -> Result<Vec<(String, Vec<u8>)>> {
        let out = dir.path().join(tag);
        std::fs::create_dir_all(&out)?;
        let f = |name: &str| out.join(name);
        let mf = p(&manifest);
        datapick(&["--jobs", jobs, "simulate", "--manifest", mf, "--rng-seed", "9", "--out", p(&f("sim.csv")), "--records-out", p(&f("items.jsonl"))])?;
        datapick(&["--jobs", jobs, "metrics", "--records", p(&f("items.jsonl")), "--out", p(&f("points.csv"))])?;
        let pts = f("points.csv");
        datapick(&[
            "--jobs", jobs, "fit", "--manifest", mf, "--points", p(&pts), "--out", p(&f("fits.csv")),
            "--variant", "three_param,two_param", "--subset", "prefix:3,prefix:4", "--exclude-target",
        ])?;
        datapick(&["--jobs", jobs, "rank", "--manifest", mf, "--points", p(&pts), "--out", p(&f("preds.csv"))])?;
        datapick(&[
            "--jobs", jobs, "decide", "--manifest", mf, "--points", p(&pts), "--fits", p(&f("fits.csv")),
            "--predictions", p(&f("preds.csv")), "--out", p(&f("decisions.csv")),
        ])?;
        datapick(&["--jobs", jobs, "frontier", "--decisions", p(&f("decisions.csv")), "--out-dir", p(&f("report"))])?;
        datapick(&["--jobs", jobs, "analyze", "--manifest", mf, "--points", p(&pts), "--out-dir", p(&f("report"))])?;
        let mut files = Vec::new();
        for entry in walk(&out)? {
            let name = entry.strip_prefix(&out)?.display().to_string();
            files.push((name, std::fs::read(&entry)?));
        }
        files.sort();
        Ok(files)
    };
    let a = run("1", "a")?;
    let b = run("1", "b")?;
    let c = run("8", "c")?;
    for (other, label) in [(&b, "repeat at --jobs 1"), (&c, "--jobs 8")] {
        ensure!(a.len() == other.len(), "{label}: file sets differ");
        for ((name, x), (_, y)) in a.iter().zip(other.iter()) {
            ensure!(x == y, "{label}: {name} differs");
        }
    }

    // Fits read back from disk are the fits that were written.
    let fits_bytes = &a.iter().find(|(n, _)| n == "fits.csv").context("fits.csv")?.1;
    let fits: Vec<FitRecord> = read_fits(fits_bytes.as_slice())?;
    let mut again = Vec::new();
    write_fits(&mut again, &fits)?;
    ensure!(&again == fits_bytes, "fit table round-trip");
    Ok(format!("{} output files identical across 3 runs", a.len()))
}

fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            out.extend(walk(&path)?);
        } else {
            out.push(path);
        }
    }
    Ok(out)
}

// 10

fn noise_recovery() -> Result<String> {
    let sigma = 0.01;
    let mut m = load_manifest("configs/synthetic_noiseless.toml")?;
    let target = m.target_config().clone();
    m.ladder = vec![target.clone()];
    m.synthetic = None;
    m.recipes = (0..25).map(|i| format!("r{i:02}")).collect();
    let truths: Vec<GroundTruthRecipe> = m
        .recipes
        .iter()
        .enumerate()
        .map(|(i, r)| GroundTruthRecipe {
            recipe: r.clone(),
            loss: LossLaw::Power(PowerLawParams {
                a: 600.0 + 10.0 * i as f64,
                alpha: 0.15,
                e: 1.40 + 0.02 * i as f64,
            }),
            link: SigmoidParams {
                a: 0.6,
                b: 0.25,
                k: -3.0,
                l0: 2.6,
            },
            noise_sigma: sigma,
            crossover: None,
        })
        .collect();
    let cfg = GenConfig {
        checkpoints_per_run: 1,
        truncate_non_default_seeds: None,
        items_per_task: None,
    };
    let draws = 50;
    let mut total = 0.0;
    for draw in 0..draws {
        let suite = gen_suite(&truths, &m, &cfg, draw)?;
        let index = PointIndex::new(&suite.points);
        let task = &m.target.tasks[0];
        total += noise_spread(&index, &m, &target.size_label, task, &m.target.metric)?.noise;
    }
    let measured = total / draws as f64;
    let off = rel_err(measured, sigma);
    ensure!(off <= 0.2, "measured noise {measured:.5} is {:.1}% from {sigma}", off * 100.0);
    Ok(format!("measured {measured:.5} vs {sigma} ({:.1}% off)", off * 100.0))
}
