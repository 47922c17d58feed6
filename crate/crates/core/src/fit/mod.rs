//! Scaling-law fitting: the two-step compute -> loss -> metric chain, its
//! variants, single-step fits, and extrapolation to the target scale.
//!
//! All fits are deterministic: the multi-start grid is fixed and visited in
//! order, and the lowest-SSE start wins (earlier start on ties).

pub mod forms;
pub mod lm;
pub mod observations;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use forms::{
    NdProblem, PowerLawProblem, SigmoidProblem, SingleStepNdProblem, SingleStepProblem,
};
use lm::{minimize, LeastSquares, LmConfig};

pub use forms::{NdParams, PowerLawParams, ScalePoint, SigmoidParams, SingleStepNdParams, SingleStepParams};
pub use observations::{fit_chain, fit_many, FitRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantSpec {
    ThreeParam,
    TwoParam,
    FiveParamNd,
    SingleStep3,
    SingleStep5,
    ThreeParamHelper,
    ThreeParamLate,
    ThreeParamHelperLate,
}

/// First-step loss law used by a two-step variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossForm {
    ThreeParam,
    TwoParam,
    FiveParamNd,
}

impl VariantSpec {
    pub const ALL: [VariantSpec; 8] = [
        Self::ThreeParam,
        Self::TwoParam,
        Self::FiveParamNd,
        Self::SingleStep3,
        Self::SingleStep5,
        Self::ThreeParamHelper,
        Self::ThreeParamLate,
        Self::ThreeParamHelperLate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ThreeParam => "three_param",
            Self::TwoParam => "two_param",
            Self::FiveParamNd => "five_param_nd",
            Self::SingleStep3 => "single_step_3",
            Self::SingleStep5 => "single_step_5",
            Self::ThreeParamHelper => "three_param_helper",
            Self::ThreeParamLate => "three_param_late",
            Self::ThreeParamHelperLate => "three_param_helper_late",
        }
    }

    pub fn is_single_step(self) -> bool {
        matches!(self, Self::SingleStep3 | Self::SingleStep5)
    }

    pub fn loss_form(self) -> Option<LossForm> {
        match self {
            Self::TwoParam => Some(LossForm::TwoParam),
            Self::FiveParamNd => Some(LossForm::FiveParamNd),
            Self::SingleStep3 | Self::SingleStep5 => None,
            _ => Some(LossForm::ThreeParam),
        }
    }

    pub fn uses_helper(self) -> bool {
        matches!(self, Self::ThreeParamHelper | Self::ThreeParamHelperLate)
    }

    pub fn late_only(self) -> bool {
        matches!(self, Self::ThreeParamLate | Self::ThreeParamHelperLate)
    }

    /// Free parameters of the stage fitted to per-size observations
    /// (the loss law, or the whole single-step form).
    pub fn min_points(self) -> usize {
        match self {
            Self::TwoParam => 2,
            Self::FiveParamNd => 5,
            Self::SingleStep3 => 5,
            Self::SingleStep5 => 7,
            _ => 3,
        }
    }

    fn link_variant(helper: bool, late: bool) -> Self {
        match (helper, late) {
            (false, false) => Self::ThreeParam,
            (true, false) => Self::ThreeParamHelper,
            (false, true) => Self::ThreeParamLate,
            (true, true) => Self::ThreeParamHelperLate,
        }
    }
}

impl fmt::Display for VariantSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::parse(None, "variant", format!("unknown variant `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum FitParams {
    PowerLaw(PowerLawParams),
    Nd(NdParams),
    Sigmoid(SigmoidParams),
    SingleStep(SingleStepParams),
    SingleStepNd(SingleStepNdParams),
}

impl FitParams {
    /// Named parameter values in a fixed order, for export.
    pub fn named(&self) -> Vec<(&'static str, f64)> {
        match *self {
            FitParams::PowerLaw(p) => vec![("A", p.a), ("alpha", p.alpha), ("E", p.e)],
            FitParams::Nd(p) => vec![("A", p.a), ("alpha", p.alpha), ("B", p.b), ("beta", p.beta), ("E", p.e)],
            FitParams::Sigmoid(p) => vec![("a", p.a), ("b", p.b), ("k", p.k), ("L0", p.l0)],
            FitParams::SingleStep(p) => {
                vec![("A", p.big_a), ("alpha", p.alpha), ("E", p.e), ("a", p.a), ("b", p.b)]
            }
            FitParams::SingleStepNd(p) => vec![
                ("A", p.big_a),
                ("alpha", p.alpha),
                ("B", p.big_b),
                ("beta", p.beta),
                ("E", p.e),
                ("a", p.a),
                ("b", p.b),
            ],
        }
    }

    pub fn form_name(&self) -> &'static str {
        match self {
            FitParams::PowerLaw(_) => "power_law",
            FitParams::Nd(_) => "nd",
            FitParams::Sigmoid(_) => "sigmoid",
            FitParams::SingleStep(_) => "single_step",
            FitParams::SingleStepNd(_) => "single_step_nd",
        }
    }

    /// Inverse of [`FitParams::named`].
    pub fn from_named(form: &str, values: &[(String, f64)]) -> Result<Self> {
        let get = |name: &str| -> Result<f64> {
            values
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::parse(None, "params", format!("{form}: missing parameter `{name}`")))
        };
        Ok(match form {
            "power_law" => FitParams::PowerLaw(PowerLawParams {
                a: get("A")?,
                alpha: get("alpha")?,
                e: get("E")?,
            }),
            "nd" => FitParams::Nd(NdParams {
                a: get("A")?,
                alpha: get("alpha")?,
                b: get("B")?,
                beta: get("beta")?,
                e: get("E")?,
            }),
            "sigmoid" => FitParams::Sigmoid(SigmoidParams {
                a: get("a")?,
                b: get("b")?,
                k: get("k")?,
                l0: get("L0")?,
            }),
            "single_step" => FitParams::SingleStep(SingleStepParams {
                big_a: get("A")?,
                alpha: get("alpha")?,
                e: get("E")?,
                a: get("a")?,
                b: get("b")?,
            }),
            "single_step_nd" => FitParams::SingleStepNd(SingleStepNdParams {
                big_a: get("A")?,
                alpha: get("alpha")?,
                big_b: get("B")?,
                beta: get("beta")?,
                e: get("E")?,
                a: get("a")?,
                b: get("b")?,
            }),
            other => return Err(Error::parse(None, "form", format!("unknown form `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub variant: VariantSpec,
    pub params: FitParams,
    pub sse: f64,
    pub n_points: usize,
    pub converged: bool,
    pub n_restarts_used: usize,
}

/// Per-size observation for a loss law: the run's scale and its smoothed final loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub scale: ScalePoint,
    pub loss: f64,
}

/// One checkpoint's (loss, metric) pair for the link fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkPoint {
    pub loss: f64,
    pub value: f64,
    pub step: u64,
    /// Last step of the run this checkpoint belongs to.
    pub final_step: u64,
}

/// One checkpoint's (scale, metric) pair for single-step fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectPoint {
    pub scale: ScalePoint,
    pub value: f64,
}

/// Exponent grid shared by every multi-start: 0.05, 0.10, ..., 1.00.
pub fn exponent_grid() -> Vec<f64> {
    (1..=20).map(|i| i as f64 * 0.05).collect()
}

pub const SIGMOID_K_STARTS: [f64; 6] = [1.0, -1.0, 4.0, -4.0, 16.0, -16.0];

/// The loss/metric pair appended by helper-point variants.
pub const HELPER_POINT: (f64, f64) = (0.0, 1.0);

struct Best {
    theta: Vec<f64>,
    sse: f64,
    converged: bool,
}

/// Grids with more starts than this are screened: every start gets a short
/// run, and only the best few continue to convergence.
const SCREEN_ABOVE: usize = 40;
const SCREEN_ITERATIONS: usize = 60;
const SCREEN_KEEP: usize = 8;

fn multistart<P: LeastSquares>(problem: &P, starts: &[Vec<f64>]) -> Best {
    let cfg = LmConfig::default();
    let candidates: Vec<Vec<f64>> = if starts.len() > SCREEN_ABOVE {
        let short = LmConfig {
            max_iterations: SCREEN_ITERATIONS,
            ..cfg
        };
        let mut scored: Vec<(f64, usize, Vec<f64>)> = starts
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let out = minimize(problem, s, &short);
                (out.sse, i, out.theta)
            })
            .filter(|(sse, ..)| sse.is_finite())
            .collect();
        scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        scored.into_iter().take(SCREEN_KEEP).map(|(.., theta)| theta).collect()
    } else {
        starts.to_vec()
    };
    let mut best: Option<Best> = None;
    for s in &candidates {
        let out = minimize(problem, s, &cfg);
        if !out.sse.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|b| out.sse < b.sse) {
            best = Some(Best {
                theta: out.theta,
                sse: out.sse,
                converged: out.converged,
            });
        }
    }
    best.unwrap_or(Best {
        theta: starts[0].clone(),
        sse: f64::INFINITY,
        converged: false,
    })
}

fn require_points(what: &str, required: usize, got: usize) -> Result<()> {
    if got < required {
        return Err(Error::InsufficientPoints {
            what: what.to_string(),
            required,
            got,
        });
    }
    Ok(())
}

fn require_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

fn require_positive_scales(what: &str, scales: impl IntoIterator<Item = ScalePoint>) -> Result<()> {
    for s in scales {
        if !(s.params > 0.0 && s.tokens > 0.0 && s.params.is_finite() && s.tokens.is_finite()) {
            return Err(Error::validation(
                "scale-positive",
                format!("{what}: parameter and token counts must be positive, got ({}, {})", s.params, s.tokens),
            ));
        }
    }
    Ok(())
}

/// Mean of the observations at steps >= 0.9 x the final step.
pub fn smooth_final_loss(series: &[(u64, f64)]) -> Result<f64> {
    let final_step = series
        .iter()
        .map(|(s, _)| *s)
        .max()
        .ok_or_else(|| Error::Empty("loss series has no observations".into()))?;
    let cutoff = 0.9 * final_step as f64;
    let window: Vec<f64> = series
        .iter()
        .filter(|(s, _)| *s as f64 >= cutoff)
        .map(|(_, v)| *v)
        .collect();
    Ok(crate::stats::mean(&window).expect("window holds the final step"))
}

/// Fit the first-step loss law of `variant` to per-size final losses.
pub fn fit_loss_curve(points: &[LossPoint], variant: VariantSpec) -> Result<FitResult> {
    let form = variant.loss_form().ok_or_else(|| {
        Error::Mismatch(format!("{variant} has no separate loss step; use fit_single_step"))
    })?;
    require_points(&format!("{variant} loss fit"), variant.min_points(), points.len())?;
    require_finite("loss values", points.iter().map(|p| p.loss))?;
    require_positive_scales("loss fit", points.iter().map(|p| p.scale))?;
    let y: Vec<f64> = points.iter().map(|p| p.loss).collect();
    let grid = exponent_grid();

    let (params, best, n_starts) = match form {
        LossForm::ThreeParam | LossForm::TwoParam => {
            let compute: Vec<f64> = points.iter().map(|p| p.scale.compute()).collect();
            check_distinct(&compute)?;
            let prob = PowerLawProblem::new(&compute, &y, form == LossForm::ThreeParam);
            let starts = prob.starts(&grid);
            let best = multistart(&prob, &starts);
            (FitParams::PowerLaw(prob.params(&best.theta)), best, starts.len())
        }
        LossForm::FiveParamNd => {
            let scales: Vec<ScalePoint> = points.iter().map(|p| p.scale).collect();
            let prob = NdProblem::new(&scales, &y);
            let starts = prob.starts(&grid);
            let best = multistart(&prob, &starts);
            (FitParams::Nd(prob.params(&best.theta)), best, starts.len())
        }
    };
    Ok(FitResult {
        variant,
        params,
        sse: best.sse,
        n_points: points.len(),
        converged: best.converged,
        n_restarts_used: n_starts,
    })
}

fn check_distinct(compute: &[f64]) -> Result<()> {
    let mut sorted = compute.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::validation("compute-distinct", "compute values must be distinct"));
    }
    Ok(())
}

/// Fit the loss-to-metric sigmoid on checkpoint observations.
///
/// `late_only` drops, per run, checkpoints before half of that run's final
/// step; `helpers` then appends the point (loss 0, metric 1).
pub fn fit_acc_curve(points: &[LinkPoint], helpers: bool, late_only: bool) -> Result<FitResult> {
    let kept: Vec<&LinkPoint> = points
        .iter()
        .filter(|p| !late_only || p.step as f64 >= 0.5 * p.final_step as f64)
        .collect();
    require_finite("link observations", kept.iter().flat_map(|p| [p.loss, p.value]))?;
    let mut x: Vec<f64> = kept.iter().map(|p| p.loss).collect();
    let mut y: Vec<f64> = kept.iter().map(|p| p.value).collect();
    if helpers {
        x.push(HELPER_POINT.0);
        y.push(HELPER_POINT.1);
    }
    require_points("sigmoid fit", 4, x.len())?;
    let prob = SigmoidProblem { x, y };
    let starts = prob.starts(&SIGMOID_K_STARTS);
    let best = multistart(&prob, &starts);
    Ok(FitResult {
        variant: VariantSpec::link_variant(helpers, late_only),
        params: FitParams::Sigmoid(SigmoidProblem::params(&best.theta)),
        sse: best.sse,
        n_points: prob.y.len(),
        converged: best.converged,
        n_restarts_used: starts.len(),
    })
}

/// Fit compute (or N, D) directly to the metric.
pub fn fit_single_step(points: &[DirectPoint], variant: VariantSpec) -> Result<FitResult> {
    if !variant.is_single_step() {
        return Err(Error::Mismatch(format!("{variant} is a two-step variant")));
    }
    require_points(&format!("{variant} fit"), variant.min_points(), points.len())?;
    require_finite("metric values", points.iter().map(|p| p.value))?;
    require_positive_scales("single-step fit", points.iter().map(|p| p.scale))?;
    let y: Vec<f64> = points.iter().map(|p| p.value).collect();
    let grid = exponent_grid();
    let (params, best, n_starts) = if variant == VariantSpec::SingleStep3 {
        let compute: Vec<f64> = points.iter().map(|p| p.scale.compute()).collect();
        let prob = SingleStepProblem::new(&compute, &y);
        let starts = prob.starts(&grid);
        let best = multistart(&prob, &starts);
        (FitParams::SingleStep(prob.params(&best.theta)), best, starts.len())
    } else {
        let scales: Vec<ScalePoint> = points.iter().map(|p| p.scale).collect();
        let prob = SingleStepNdProblem::new(&scales, &y);
        let starts = prob.starts(&grid);
        let best = multistart(&prob, &starts);
        (FitParams::SingleStepNd(prob.params(&best.theta)), best, starts.len())
    };
    Ok(FitResult {
        variant,
        params,
        sse: best.sse,
        n_points: points.len(),
        converged: best.converged,
        n_restarts_used: n_starts,
    })
}

/// The fitted prediction path for one (recipe, task, variant, subset).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FitChain {
    TwoStep {
        variant: VariantSpec,
        loss: FitResult,
        link: FitResult,
    },
    Direct {
        variant: VariantSpec,
        fit: FitResult,
    },
}

impl FitChain {
    pub fn variant(&self) -> VariantSpec {
        match self {
            FitChain::TwoStep { variant, .. } | FitChain::Direct { variant, .. } => *variant,
        }
    }

    pub fn converged(&self) -> bool {
        match self {
            FitChain::TwoStep { loss, link, .. } => loss.converged && link.converged,
            FitChain::Direct { fit, .. } => fit.converged,
        }
    }

    /// Predicted loss at `target` (two-step chains only).
    pub fn predict_loss(&self, target: ScalePoint) -> Option<f64> {
        match self {
            FitChain::TwoStep { loss, .. } => Some(match loss.params {
                FitParams::PowerLaw(p) => p.loss(target.compute()),
                FitParams::Nd(p) => p.loss(target),
                _ => return None,
            }),
            FitChain::Direct { .. } => None,
        }
    }

    /// Unclamped metric prediction at `target`.
    pub fn predict_raw(&self, target: ScalePoint) -> Result<f64> {
        match self {
            FitChain::TwoStep { link, .. } => {
                let loss = self.predict_loss(target).ok_or_else(|| bad_params("loss step"))?;
                match link.params {
                    FitParams::Sigmoid(s) => Ok(s.value(loss)),
                    _ => Err(bad_params("link step")),
                }
            }
            FitChain::Direct { fit, .. } => match fit.params {
                FitParams::SingleStep(p) => Ok(p.value(target.compute())),
                FitParams::SingleStepNd(p) => Ok(p.value(target)),
                _ => Err(bad_params("single step")),
            },
        }
    }
}

fn bad_params(stage: &str) -> Error {
    Error::Mismatch(format!("{stage} holds parameters of the wrong form"))
}

/// Predicted metric at `target`, clamped to [0, 1]. Non-converged chains are an
/// error unless `best_effort` is set.
pub fn predict_at_target(chain: &FitChain, target: ScalePoint, best_effort: bool) -> Result<f64> {
    if !best_effort && !chain.converged() {
        return Err(Error::NotConverged(format!("{} chain", chain.variant())));
    }
    let v = chain.predict_raw(target)?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("{} prediction", chain.variant())));
    }
    Ok(v.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetKind {
    /// The k smallest sizes.
    Prefix,
    /// Sizes from the k-th (1-based) to the largest.
    Suffix,
}

/// A contiguous run of ladder sizes used for one multi-scale fit.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SizeSubset {
    pub kind: SubsetKind,
    pub k: usize,
    pub sizes: Vec<String>,
}

impl SizeSubset {
    pub fn label(&self) -> String {
        match self.kind {
            SubsetKind::Prefix => format!("prefix:{}", self.k),
            SubsetKind::Suffix => format!("suffix:{}", self.k),
        }
    }

    /// Resolve a `prefix:k` / `suffix:k` label against an ascending ladder.
    pub fn parse(label: &str, ladder: &[String]) -> Result<Self> {
        let bad = || Error::parse(None, "subset", format!("`{label}` is not prefix:k or suffix:k for this ladder"));
        let (kind, k) = label.split_once(':').ok_or_else(bad)?;
        let k: usize = k.parse().map_err(|_| bad())?;
        let n = ladder.len();
        match kind {
            "prefix" if (1..=n).contains(&k) => Ok(Self {
                kind: SubsetKind::Prefix,
                k,
                sizes: ladder[..k].to_vec(),
            }),
            "suffix" if (1..=n).contains(&k) => Ok(Self {
                kind: SubsetKind::Suffix,
                k,
                sizes: ladder[k - 1..].to_vec(),
            }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for SizeSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Prefixes `{s1..sk}` for 3 <= k <= n and suffixes `{sk..sn}` for 2 <= k <= n-3.
pub fn size_subsets(ladder: &[String]) -> Vec<SizeSubset> {
    let n = ladder.len();
    if n < 3 {
        return Vec::new();
    }
    let mut out: Vec<SizeSubset> = (3..=n)
        .map(|k| SizeSubset {
            kind: SubsetKind::Prefix,
            k,
            sizes: ladder[..k].to_vec(),
        })
        .collect();
    for k in 2..=n.saturating_sub(3) {
        out.push(SizeSubset {
            kind: SubsetKind::Suffix,
            k,
            sizes: ladder[k - 1..].to_vec(),
        });
    }
    out
}
