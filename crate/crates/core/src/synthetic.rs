//! Suites generated from known loss laws and links, with seeded noise and
//! optional crossovers. Used as the ground truth in tests.

use std::collections::{BTreeMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::GoldRanking;
use crate::error::{Error, Result};
use crate::fit::{NdParams, PowerLawParams, ScalePoint, SigmoidParams};
use crate::ingest::{CheckpointKey, Choice, ItemScoreRecord, MetricPoint, ModelConfig, SuiteManifest};
use crate::metrics::TASK_LOSS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossLaw {
    Power(PowerLawParams),
    Nd(NdParams),
}

impl LossLaw {
    pub fn loss(&self, scale: ScalePoint) -> f64 {
        match self {
            LossLaw::Power(p) => p.loss(scale.compute()),
            LossLaw::Nd(p) => p.loss(scale),
        }
    }

    fn validate(&self, recipe: &str) -> Result<()> {
        let ok = match self {
            LossLaw::Power(p) => p.a > 0.0 && p.alpha > 0.0 && p.e >= 0.0 && p.e.is_finite() && p.a.is_finite(),
            LossLaw::Nd(p) => {
                p.a > 0.0
                    && p.b > 0.0
                    && p.alpha > 0.0
                    && p.beta > 0.0
                    && p.e >= 0.0
                    && [p.a, p.b, p.alpha, p.beta, p.e].iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation(
                "law-params",
                format!("{recipe}: loss law needs A, B > 0, exponents > 0 and E >= 0"),
            ))
        }
    }
}

/// Pins a power-law recipe to cross another recipe's loss curve at `compute`
/// FLOPs. The recipe keeps its own exponent and E; its A is solved from the
/// crossing condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crossover {
    pub of: String,
    pub compute: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecipe {
    pub recipe: String,
    pub loss: LossLaw,
    pub link: SigmoidParams,
    /// Std of the Gaussian noise added to metric values, per seed.
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crossover: Option<Crossover>,
}

impl GroundTruthRecipe {
    /// Noise-free metric value at a scale.
    pub fn value(&self, scale: ScalePoint) -> f64 {
        self.link.value(self.loss.loss(scale))
    }
}

/// Generation settings that do not depend on the ground truths.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub checkpoints_per_run: u64,
    /// Non-default seeds stop at this fraction of their training steps.
    pub truncate_non_default_seeds: Option<f64>,
    /// Emit this many item records per (checkpoint, task) when set.
    pub items_per_task: Option<usize>,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            checkpoints_per_run: 8,
            truncate_non_default_seeds: None,
            items_per_task: None,
        }
    }
}

fn default_checkpoints() -> u64 {
    8
}

/// The `[synthetic]` table of a suite manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    #[serde(default = "default_checkpoints")]
    pub checkpoints_per_run: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_non_default_seeds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items_per_task: Option<usize>,
    #[serde(default)]
    pub truths: Vec<GroundTruthRecipe>,
}

impl SyntheticSection {
    pub fn config(&self) -> GenConfig {
        GenConfig {
            checkpoints_per_run: self.checkpoints_per_run,
            truncate_non_default_seeds: self.truncate_non_default_seeds,
            items_per_task: self.items_per_task,
        }
    }

    pub fn validate(&self, manifest: &SuiteManifest) -> Result<()> {
        validate_config(&self.config())?;
        if self.truths.is_empty() {
            return Ok(());
        }
        let declared: HashSet<&str> = manifest.recipes.iter().map(String::as_str).collect();
        let given: HashSet<&str> = self.truths.iter().map(|t| t.recipe.as_str()).collect();
        if given.len() != self.truths.len() {
            return Err(Error::validation("truths-unique", "a recipe has more than one ground truth"));
        }
        if given != declared {
            let mut missing: Vec<&str> = declared.difference(&given).copied().collect();
            let mut extra: Vec<&str> = given.difference(&declared).copied().collect();
            missing.sort_unstable();
            extra.sort_unstable();
            return Err(Error::validation(
                "truths-cover-recipes",
                format!("recipes without a truth: {missing:?}; truths without a recipe: {extra:?}"),
            ));
        }
        resolve_truths(&self.truths).map(|_| ())
    }
}

fn validate_config(cfg: &GenConfig) -> Result<()> {
    if cfg.checkpoints_per_run == 0 {
        return Err(Error::validation("checkpoints-positive", "checkpoints_per_run must be >= 1"));
    }
    if let Some(f) = cfg.truncate_non_default_seeds {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::validation(
                "truncate-fraction",
                format!("truncate_non_default_seeds {f} is outside (0, 1]"),
            ));
        }
    }
    if cfg.items_per_task == Some(0) {
        return Err(Error::validation("items-positive", "items_per_task must be >= 1"));
    }
    Ok(())
}

/// Validate the truths and replace the A of every crossover recipe by the
/// value that makes its curve meet the other recipe's at the given compute.
pub fn resolve_truths(truths: &[GroundTruthRecipe]) -> Result<Vec<GroundTruthRecipe>> {
    let by_name: BTreeMap<&str, &GroundTruthRecipe> = truths.iter().map(|t| (t.recipe.as_str(), t)).collect();
    let mut out = Vec::with_capacity(truths.len());
    for t in truths {
        t.loss.validate(&t.recipe)?;
        if !(t.noise_sigma >= 0.0 && t.noise_sigma.is_finite()) {
            return Err(Error::validation(
                "sigma-nonnegative",
                format!("{}: noise_sigma must be finite and >= 0", t.recipe),
            ));
        }
        let mut t = t.clone();
        if let Some(x) = &t.crossover {
            let other = by_name.get(x.of.as_str()).ok_or_else(|| {
                Error::validation("crossover-ref", format!("{}: crossover names unknown recipe {}", t.recipe, x.of))
            })?;
            let (LossLaw::Power(own), LossLaw::Power(theirs), None) = (&mut t.loss, &other.loss, &other.crossover)
            else {
                return Err(Error::validation(
                    "crossover-ref",
                    format!("{}: crossovers need two power laws and a fixed reference", t.recipe),
                ));
            };
            if !(x.compute > 0.0 && x.compute.is_finite()) {
                return Err(Error::validation("crossover-compute", format!("{}: compute must be > 0", t.recipe)));
            }
            let gap = theirs.loss(x.compute) - own.e;
            if gap <= 0.0 {
                return Err(Error::validation(
                    "crossover-compute",
                    format!("{}: E is above the reference loss at the crossing", t.recipe),
                ));
            }
            own.a = gap * x.compute.powf(own.alpha);
        }
        out.push(t);
    }
    Ok(out)
}

/// Steps of the evenly spaced checkpoint schedule, ending at `train_steps`.
pub fn checkpoint_steps(cfg: &ModelConfig, n: u64) -> Vec<u64> {
    let t = cfg.train_steps as u128;
    let n = n.min(cfg.train_steps).max(1) as u128;
    (1..=n).map(|i| (i * t / n) as u64).collect()
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in part.iter().chain(std::iter::once(&0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Standard normal draw determined only by its key.
pub fn keyed_normal(rng_seed: u64, key: &CheckpointKey, task: &str) -> f64 {
    let h = fnv1a(&[
        &rng_seed.to_le_bytes(),
        key.recipe.as_bytes(),
        key.size_label.as_bytes(),
        key.seed.as_bytes(),
        &key.step.to_le_bytes(),
        task.as_bytes(),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(h));
    StandardNormal.sample(&mut rng)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeneratedSuite {
    pub points: Vec<MetricPoint>,
    pub items: Option<Vec<ItemScoreRecord>>,
}

const CHOICES: usize = 4;

/// Items whose per-char task loss is `loss` and whose per-char normalized
/// correct probability is `value`. Distractors share the remaining mass.
fn items_for(key: &CheckpointKey, task: &str, n: usize, loss: f64, value: f64) -> Result<Vec<ItemScoreRecord>> {
    if !(value > 0.0 && value < 1.0) {
        return Err(Error::validation(
            "item-value-range",
            format!("{key:?} {task}: value {value} cannot be encoded as a normalized probability"),
        ));
    }
    let p_correct_ln = -loss;
    // p_d = p_c (1 - v) / (3 v), in log space
    let p_wrong_ln = p_correct_ln + (1.0 - value).ln() - ((CHOICES - 1) as f64 * value).ln();
    if p_wrong_ln > 0.0 {
        return Err(Error::validation(
            "item-value-range",
            format!("{key:?} {task}: value {value} is too small for loss {loss}"),
        ));
    }
    Ok((0..n)
        .map(|i| {
            let choices = (0..CHOICES)
                .map(|c| {
                    let chars = 12 + ((i * 7 + c * 3) % 11) as u32;
                    let ln_p = if c == 0 { p_correct_ln } else { p_wrong_ln };
                    Choice {
                        logprob: ln_p * chars as f64,
                        tokens: chars.div_ceil(4),
                        chars,
                        correct: c == 0,
                    }
                })
                .collect();
            ItemScoreRecord {
                key: key.clone(),
                task: task.to_string(),
                item: format!("item{i:04}"),
                choices,
            }
        })
        .collect())
}

/// Generate a suite: for every (recipe, size, seed, checkpoint, task), a
/// noiseless task-loss point and a target-metric point equal to the link of
/// that loss plus keyed Gaussian noise. Output order is fixed.
pub fn gen_suite(
    truths: &[GroundTruthRecipe],
    manifest: &SuiteManifest,
    cfg: &GenConfig,
    rng_seed: u64,
) -> Result<GeneratedSuite> {
    validate_config(cfg)?;
    if manifest.ladder.is_empty() {
        return Err(Error::validation("ladder-nonempty", "ladder has no entries"));
    }
    let truths = resolve_truths(truths)?;
    let metric = &manifest.target.metric;
    let tasks = &manifest.target.tasks;
    let mut cells = Vec::new();
    for t in &truths {
        for m in &manifest.ladder {
            for (si, seed) in manifest.seeds.iter().enumerate() {
                cells.push((t, m, si, seed));
            }
        }
    }
    let per_cell: Vec<Result<(Vec<MetricPoint>, Vec<ItemScoreRecord>)>> = cells
        .par_iter()
        .map(|&(t, m, si, seed)| {
            let limit = match cfg.truncate_non_default_seeds {
                Some(f) if si > 0 => (f * m.train_steps as f64).floor() as u64,
                _ => m.train_steps,
            };
            let mut points = Vec::new();
            let mut items = Vec::new();
            for step in checkpoint_steps(m, cfg.checkpoints_per_run).into_iter().filter(|&s| s <= limit) {
                let tokens = m.tokens_at_step(step);
                let key = CheckpointKey::new(&t.recipe, &m.size_label, seed, step, tokens);
                let loss = t.loss.loss(ScalePoint::new(m.params(), tokens as f64));
                let clean = t.link.value(loss);
                for task in tasks {
                    let value = if t.noise_sigma > 0.0 {
                        clean + t.noise_sigma * keyed_normal(rng_seed, &key, task)
                    } else {
                        clean
                    };
                    points.push(MetricPoint {
                        key: key.clone(),
                        task: task.clone(),
                        metric: TASK_LOSS.to_string(),
                        value: loss,
                    });
                    points.push(MetricPoint {
                        key: key.clone(),
                        task: task.clone(),
                        metric: metric.clone(),
                        value,
                    });
                    if let Some(n) = cfg.items_per_task {
                        items.extend(items_for(&key, task, n, loss, value)?);
                    }
                }
            }
            Ok((points, items))
        })
        .collect();
    let mut suite = GeneratedSuite {
        points: Vec::new(),
        items: cfg.items_per_task.map(|_| Vec::new()),
    };
    for cell in per_cell {
        let (p, i) = cell?;
        suite.points.extend(p);
        if let Some(all) = suite.items.as_mut() {
            all.extend(i);
        }
    }
    Ok(suite)
}

/// Noise-free values at the final checkpoint of the target size.
pub fn true_gold(truths: &[GroundTruthRecipe], manifest: &SuiteManifest) -> Result<GoldRanking> {
    let truths = resolve_truths(truths)?;
    let m = manifest.size(&manifest.target.size)?;
    let scale = ScalePoint::new(m.params(), m.tokens_at_step(m.train_steps) as f64);
    Ok(GoldRanking {
        metric: manifest.target.metric.clone(),
        size_label: m.size_label.clone(),
        values: truths.iter().map(|t| (t.recipe.clone(), t.value(scale))).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::TargetSpec;

    fn cfg(label: &str, n: u64) -> ModelConfig {
        ModelConfig {
            size_label: label.into(),
            non_embedding_params: n,
            tokens_trained: 100 * n,
            train_steps: 1000,
            batch_size: 32,
            hidden_dim: 64,
            n_heads: 4,
            n_layers: 4,
            learning_rate: 1e-3,
        }
    }

    fn manifest() -> SuiteManifest {
        SuiteManifest {
            ladder: vec![cfg("10M", 10_000_000), cfg("100M", 100_000_000), cfg("1B", 1_000_000_000)],
            recipes: vec!["a".into(), "b".into()],
            seeds: vec!["s0".into(), "s1".into()],
            target: TargetSpec {
                size: "1B".into(),
                tasks: vec!["t".into()],
                metric: "correct_prob_per_char".into(),
            },
            early_stop_fraction: 0.25,
            token_param_ratio: None,
            ratio_tolerance: 0.05,
            synthetic: None,
        }
    }

    fn truth(name: &str, a: f64, alpha: f64, sigma: f64) -> GroundTruthRecipe {
        GroundTruthRecipe {
            recipe: name.into(),
            loss: LossLaw::Power(PowerLawParams { a, alpha, e: 1.0 }),
            link: SigmoidParams {
                a: 0.7,
                b: 0.25,
                k: -3.0,
                l0: 2.0,
            },
            noise_sigma: sigma,
            crossover: None,
        }
    }

    #[test]
    fn noiseless_values_lie_on_the_curve() {
        let m = manifest();
        let truths = [truth("a", 400.0, 0.12, 0.0), truth("b", 500.0, 0.12, 0.0)];
        let suite = gen_suite(&truths, &m, &GenConfig::default(), 7).unwrap();
        for p in suite.points.iter().filter(|p| p.metric != TASK_LOSS) {
            let size = m.size(&p.key.size_label).unwrap();
            let t = truths.iter().find(|t| t.recipe == p.key.recipe).unwrap();
            assert_eq!(p.value, t.value(ScalePoint::new(size.params(), p.key.tokens_seen as f64)));
        }
        assert_eq!(suite.points.len(), 2 * 3 * 2 * 8 * 2);
    }

    #[test]
    fn same_seed_same_suite() {
        let m = manifest();
        let truths = [truth("a", 400.0, 0.12, 0.02), truth("b", 500.0, 0.12, 0.02)];
        let x = gen_suite(&truths, &m, &GenConfig::default(), 11).unwrap();
        let y = gen_suite(&truths, &m, &GenConfig::default(), 11).unwrap();
        let z = gen_suite(&truths, &m, &GenConfig::default(), 12).unwrap();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn crossover_meets_at_given_compute() {
        let mut b = truth("b", 1.0, 0.2, 0.0);
        b.crossover = Some(Crossover {
            of: "a".into(),
            compute: 1e19,
        });
        let r = resolve_truths(&[truth("a", 400.0, 0.12, 0.0), b]).unwrap();
        let (LossLaw::Power(pa), LossLaw::Power(pb)) = (r[0].loss, r[1].loss) else {
            unreachable!()
        };
        assert!((pa.loss(1e19) - pb.loss(1e19)).abs() < 1e-12);
        assert!(pb.loss(1e18) > pa.loss(1e18));
        assert!(pb.loss(1e20) < pa.loss(1e20));
    }

    #[test]
    fn truncated_seeds_stop_early() {
        let m = manifest();
        let cfg = GenConfig {
            truncate_non_default_seeds: Some(0.5),
            ..GenConfig::default()
        };
        let suite = gen_suite(&[truth("a", 400.0, 0.12, 0.0)], &m, &cfg, 1).unwrap();
        let max_s1 = suite.points.iter().filter(|p| p.key.seed == "s1").map(|p| p.key.step).max();
        assert_eq!(max_s1, Some(500));
    }

    #[test]
    fn items_encode_loss_and_value() {
        let key = CheckpointKey::new("a", "10M", "s0", 10, 100);
        let items = items_for(&key, "t", 3, 1.3, 0.42).unwrap();
        let refs: Vec<&ItemScoreRecord> = items.iter().collect();
        let loss = crate::metrics::compute_task_loss(&refs).unwrap().value;
        let v = crate::metrics::compute_metric(&refs, "norm_correct_prob_per_char".parse().unwrap())
            .unwrap()
            .value;
        assert!((loss - 1.3).abs() < 1e-12);
        assert!((v - 0.42).abs() < 1e-12);
        for r in &items {
            r.validate().unwrap();
        }
    }

    #[test]
    fn single_recipe_gold() {
        let g = true_gold(&[truth("a", 400.0, 0.12, 0.0)], &manifest()).unwrap();
        assert_eq!(g.values.len(), 1);
    }
}
