//! Functional forms of the loss laws and loss-to-metric links, with their
//! least-squares problems.
//!
//! Power-law terms are fitted in a centered log parameterization,
//! `A / C^alpha = A' * exp(-alpha * (ln C - mean ln C))`, which keeps the
//! Jacobian well scaled when compute spans many orders of magnitude. The
//! public parameter records always hold the plain `A`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::budget::flops;
use crate::fit::lm::LeastSquares;

/// Parameter count N and token count D of one observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalePoint {
    pub params: f64,
    pub tokens: f64,
}

impl ScalePoint {
    pub fn new(params: f64, tokens: f64) -> Self {
        Self { params, tokens }
    }

    pub fn compute(&self) -> f64 {
        flops(self.params, self.tokens)
    }
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `L(C) = A / C^alpha + E`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawParams {
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    #[serde(rename = "E")]
    pub e: f64,
}

impl PowerLawParams {
    pub fn loss(&self, compute: f64) -> f64 {
        (self.a.ln() - self.alpha * compute.ln()).exp() + self.e
    }
}

/// `L(N, D) = A / N^alpha + B / D^beta + E`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NdParams {
    #[serde(rename = "A")]
    pub a: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub b: f64,
    pub beta: f64,
    #[serde(rename = "E")]
    pub e: f64,
}

impl NdParams {
    pub fn loss(&self, scale: ScalePoint) -> f64 {
        (self.a.ln() - self.alpha * scale.params.ln()).exp()
            + (self.b.ln() - self.beta * scale.tokens.ln()).exp()
            + self.e
    }
}

/// `Acc(L) = a / (1 + exp(-k (L - L0))) + b`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidParams {
    pub a: f64,
    pub b: f64,
    pub k: f64,
    #[serde(rename = "L0")]
    pub l0: f64,
}

impl SigmoidParams {
    pub fn value(&self, loss: f64) -> f64 {
        self.a * logistic(self.k * (loss - self.l0)) + self.b
    }

    /// Same curve with `a >= 0`: `(a, b, k) -> (-a, a + b, -k)` when `a < 0`.
    pub fn canonical(self) -> Self {
        if self.a < 0.0 {
            Self {
                a: -self.a,
                b: self.a + self.b,
                k: -self.k,
                l0: self.l0,
            }
        } else {
            self
        }
    }
}

/// Compute-to-metric in one step, `a / (1 + exp(-(A / C^alpha + E))) + b`.
///
/// The sigmoid's `k` and `L0` are folded into `A` and `E` (so `A` is signed),
/// which leaves only identifiable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleStepParams {
    #[serde(rename = "A")]
    pub big_a: f64,
    pub alpha: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub a: f64,
    pub b: f64,
}

impl SingleStepParams {
    pub fn value(&self, compute: f64) -> f64 {
        let z = self.big_a * (-self.alpha * compute.ln()).exp() + self.e;
        self.a * logistic(z) + self.b
    }

    fn canonical(self) -> Self {
        if self.a < 0.0 {
            Self {
                big_a: -self.big_a,
                alpha: self.alpha,
                e: -self.e,
                a: -self.a,
                b: self.a + self.b,
            }
        } else {
            self
        }
    }
}

/// `a / (1 + exp(-(A / N^alpha + B / D^beta + E))) + b`, seven free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleStepNdParams {
    #[serde(rename = "A")]
    pub big_a: f64,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub big_b: f64,
    pub beta: f64,
    #[serde(rename = "E")]
    pub e: f64,
    pub a: f64,
    pub b: f64,
}

impl SingleStepNdParams {
    pub fn value(&self, scale: ScalePoint) -> f64 {
        let z = self.big_a * (-self.alpha * scale.params.ln()).exp()
            + self.big_b * (-self.beta * scale.tokens.ln()).exp()
            + self.e;
        self.a * logistic(z) + self.b
    }

    fn canonical(self) -> Self {
        if self.a < 0.0 {
            Self {
                big_a: -self.big_a,
                big_b: -self.big_b,
                e: -self.e,
                a: -self.a,
                b: self.a + self.b,
                ..self
            }
        } else {
            self
        }
    }
}

fn center(xs: &[f64]) -> (Vec<f64>, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| x - m).collect(), m)
}

/// Power law in compute. `theta = [ln A', alpha, E]`, or `[ln A', alpha]` without E.
pub(crate) struct PowerLawProblem {
    pub dx: Vec<f64>,
    pub x_ref: f64,
    pub y: Vec<f64>,
    pub with_e: bool,
}

impl PowerLawProblem {
    pub fn new(compute: &[f64], y: &[f64], with_e: bool) -> Self {
        let logs: Vec<f64> = compute.iter().map(|c| c.ln()).collect();
        let (dx, x_ref) = center(&logs);
        Self {
            dx,
            x_ref,
            y: y.to_vec(),
            with_e,
        }
    }

    pub fn params(&self, t: &[f64]) -> PowerLawParams {
        PowerLawParams {
            a: (t[0] + t[1] * self.x_ref).exp(),
            alpha: t[1],
            e: if self.with_e { t[2] } else { 0.0 },
        }
    }

    pub fn starts(&self, alphas: &[f64]) -> Vec<Vec<f64>> {
        let min_y = self.y.iter().copied().fold(f64::INFINITY, f64::min);
        let e0 = if !self.with_e {
            0.0
        } else if min_y > 0.0 {
            0.9 * min_y
        } else {
            min_y - 1.0
        };
        alphas
            .iter()
            .map(|&alpha| {
                let ln_a = self
                    .y
                    .iter()
                    .zip(&self.dx)
                    .map(|(y, dx)| (y - e0).max(1e-300).ln() + alpha * dx)
                    .sum::<f64>()
                    / self.y.len() as f64;
                let mut t = vec![ln_a, alpha];
                if self.with_e {
                    t.push(e0);
                }
                t
            })
            .collect()
    }
}

impl LeastSquares for PowerLawProblem {
    fn n_params(&self) -> usize {
        if self.with_e {
            3
        } else {
            2
        }
    }
    fn n_residuals(&self) -> usize {
        self.y.len()
    }
    fn residuals(&self, t: &[f64], out: &mut [f64]) {
        let e = if self.with_e { t[2] } else { 0.0 };
        for i in 0..self.y.len() {
            out[i] = (t[0] - t[1] * self.dx[i]).exp() + e - self.y[i];
        }
    }
    fn jacobian(&self, t: &[f64], out: &mut DMatrix<f64>) {
        for i in 0..self.y.len() {
            let term = (t[0] - t[1] * self.dx[i]).exp();
            out[(i, 0)] = term;
            out[(i, 1)] = -self.dx[i] * term;
            if self.with_e {
                out[(i, 2)] = 1.0;
            }
        }
    }
}

/// Two-term law in (N, D). `theta = [ln A', alpha, ln B', beta, E]`.
pub(crate) struct NdProblem {
    pub du: Vec<f64>,
    pub u_ref: f64,
    pub dv: Vec<f64>,
    pub v_ref: f64,
    pub y: Vec<f64>,
}

impl NdProblem {
    pub fn new(scales: &[ScalePoint], y: &[f64]) -> Self {
        let (du, u_ref) = center(&scales.iter().map(|s| s.params.ln()).collect::<Vec<_>>());
        let (dv, v_ref) = center(&scales.iter().map(|s| s.tokens.ln()).collect::<Vec<_>>());
        Self {
            du,
            u_ref,
            dv,
            v_ref,
            y: y.to_vec(),
        }
    }

    pub fn params(&self, t: &[f64]) -> NdParams {
        NdParams {
            a: (t[0] + t[1] * self.u_ref).exp(),
            alpha: t[1],
            b: (t[2] + t[3] * self.v_ref).exp(),
            beta: t[3],
            e: t[4],
        }
    }

    pub fn starts(&self, grid: &[f64]) -> Vec<Vec<f64>> {
        let min_y = self.y.iter().copied().fold(f64::INFINITY, f64::min);
        let e0 = if min_y > 0.0 { 0.9 * min_y } else { min_y - 1.0 };
        let target: Vec<f64> = self.y.iter().map(|y| y - e0).collect();
        let mut out = Vec::with_capacity(grid.len() * grid.len());
        for &alpha in grid {
            for &beta in grid {
                let f: Vec<f64> = self.du.iter().map(|d| (-alpha * d).exp()).collect();
                let g: Vec<f64> = self.dv.iter().map(|d| (-beta * d).exp()).collect();
                let (mut a, mut b) = linear_2(&f, &g, &target).unwrap_or((0.0, 0.0));
                if !(a > 0.0 && b > 0.0) {
                    let half = (target.iter().sum::<f64>() / target.len() as f64).max(1e-12) / 2.0;
                    a = half;
                    b = half;
                }
                out.push(vec![a.ln(), alpha, b.ln(), beta, e0]);
            }
        }
        out
    }
}

impl LeastSquares for NdProblem {
    fn n_params(&self) -> usize {
        5
    }
    fn n_residuals(&self) -> usize {
        self.y.len()
    }
    fn residuals(&self, t: &[f64], out: &mut [f64]) {
        for i in 0..self.y.len() {
            out[i] = (t[0] - t[1] * self.du[i]).exp() + (t[2] - t[3] * self.dv[i]).exp() + t[4] - self.y[i];
        }
    }
    fn jacobian(&self, t: &[f64], out: &mut DMatrix<f64>) {
        for i in 0..self.y.len() {
            let f = (t[0] - t[1] * self.du[i]).exp();
            let g = (t[2] - t[3] * self.dv[i]).exp();
            out[(i, 0)] = f;
            out[(i, 1)] = -self.du[i] * f;
            out[(i, 2)] = g;
            out[(i, 3)] = -self.dv[i] * g;
            out[(i, 4)] = 1.0;
        }
    }
}

/// Least squares for `y ~ p f + q g` (no intercept).
fn linear_2(f: &[f64], g: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let (mut ff, mut fg, mut gg, mut fy, mut gy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..y.len() {
        ff += f[i] * f[i];
        fg += f[i] * g[i];
        gg += g[i] * g[i];
        fy += f[i] * y[i];
        gy += g[i] * y[i];
    }
    let det = ff * gg - fg * fg;
    if det.abs() <= 1e-12 * ff * gg || det == 0.0 {
        return None;
    }
    Some(((fy * gg - gy * fg) / det, (ff * gy - fg * fy) / det))
}

/// Loss-to-metric sigmoid. `theta = [a, b, k, L0]`.
pub(crate) struct SigmoidProblem {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl SigmoidProblem {
    pub fn params(t: &[f64]) -> SigmoidParams {
        SigmoidParams {
            a: t[0],
            b: t[1],
            k: t[2],
            l0: t[3],
        }
        .canonical()
    }

    pub fn starts(&self, ks: &[f64]) -> Vec<Vec<f64>> {
        let min_y = self.y.iter().copied().fold(f64::INFINITY, f64::min);
        let max_y = self.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let l0 = crate::stats::median(&self.x).unwrap_or(0.0);
        ks.iter().map(|&k| vec![max_y - min_y, min_y, k, l0]).collect()
    }
}

impl LeastSquares for SigmoidProblem {
    fn n_params(&self) -> usize {
        4
    }
    fn n_residuals(&self) -> usize {
        self.y.len()
    }
    fn residuals(&self, t: &[f64], out: &mut [f64]) {
        for i in 0..self.y.len() {
            out[i] = t[0] * logistic(t[2] * (self.x[i] - t[3])) + t[1] - self.y[i];
        }
    }
    fn jacobian(&self, t: &[f64], out: &mut DMatrix<f64>) {
        for i in 0..self.y.len() {
            let d = self.x[i] - t[3];
            let s = logistic(t[2] * d);
            let ds = s * (1.0 - s);
            out[(i, 0)] = s;
            out[(i, 1)] = 1.0;
            out[(i, 2)] = t[0] * ds * d;
            out[(i, 3)] = -t[0] * ds * t[2];
        }
    }
}

/// Starting amplitude/floor for single-step fits, widened slightly so the
/// observed values map to finite logits.
fn single_step_envelope(y: &[f64]) -> (f64, f64, Vec<f64>) {
    let min_y = y.iter().copied().fold(f64::INFINITY, f64::min);
    let max_y = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = (max_y - min_y).max(1e-6);
    let a = 1.1 * range;
    let b = min_y - 0.05 * range;
    let z = y
        .iter()
        .map(|v| {
            let p = ((v - b) / a).clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        })
        .collect();
    (a, b, z)
}

/// Single-step compute-to-metric. `theta = [A', alpha, E, a, b]`.
pub(crate) struct SingleStepProblem {
    pub dx: Vec<f64>,
    pub x_ref: f64,
    pub y: Vec<f64>,
}

impl SingleStepProblem {
    pub fn new(compute: &[f64], y: &[f64]) -> Self {
        let (dx, x_ref) = center(&compute.iter().map(|c| c.ln()).collect::<Vec<_>>());
        Self { dx, x_ref, y: y.to_vec() }
    }

    pub fn params(&self, t: &[f64]) -> SingleStepParams {
        SingleStepParams {
            big_a: t[0] * (t[1] * self.x_ref).exp(),
            alpha: t[1],
            e: t[2],
            a: t[3],
            b: t[4],
        }
        .canonical()
    }

    pub fn starts(&self, alphas: &[f64]) -> Vec<Vec<f64>> {
        let (a, b, z) = single_step_envelope(&self.y);
        let ones = vec![1.0; z.len()];
        alphas
            .iter()
            .map(|&alpha| {
                let f: Vec<f64> = self.dx.iter().map(|d| (-alpha * d).exp()).collect();
                let (big_a, e) = linear_2(&f, &ones, &z).unwrap_or((0.0, z.iter().sum::<f64>() / z.len() as f64));
                vec![big_a, alpha, e, a, b]
            })
            .collect()
    }
}

impl LeastSquares for SingleStepProblem {
    fn n_params(&self) -> usize {
        5
    }
    fn n_residuals(&self) -> usize {
        self.y.len()
    }
    fn residuals(&self, t: &[f64], out: &mut [f64]) {
        for i in 0..self.y.len() {
            let z = t[0] * (-t[1] * self.dx[i]).exp() + t[2];
            out[i] = t[3] * logistic(z) + t[4] - self.y[i];
        }
    }
    fn jacobian(&self, t: &[f64], out: &mut DMatrix<f64>) {
        for i in 0..self.y.len() {
            let f = (-t[1] * self.dx[i]).exp();
            let s = logistic(t[0] * f + t[2]);
            let ds = t[3] * s * (1.0 - s);
            out[(i, 0)] = ds * f;
            out[(i, 1)] = -ds * t[0] * self.dx[i] * f;
            out[(i, 2)] = ds;
            out[(i, 3)] = s;
            out[(i, 4)] = 1.0;
        }
    }
}

/// Single-step (N, D)-to-metric. `theta = [A', alpha, B', beta, E, a, b]`.
pub(crate) struct SingleStepNdProblem {
    pub du: Vec<f64>,
    pub u_ref: f64,
    pub dv: Vec<f64>,
    pub v_ref: f64,
    pub y: Vec<f64>,
}

impl SingleStepNdProblem {
    pub fn new(scales: &[ScalePoint], y: &[f64]) -> Self {
        let (du, u_ref) = center(&scales.iter().map(|s| s.params.ln()).collect::<Vec<_>>());
        let (dv, v_ref) = center(&scales.iter().map(|s| s.tokens.ln()).collect::<Vec<_>>());
        Self {
            du,
            u_ref,
            dv,
            v_ref,
            y: y.to_vec(),
        }
    }

    pub fn params(&self, t: &[f64]) -> SingleStepNdParams {
        SingleStepNdParams {
            big_a: t[0] * (t[1] * self.u_ref).exp(),
            alpha: t[1],
            big_b: t[2] * (t[3] * self.v_ref).exp(),
            beta: t[3],
            e: t[4],
            a: t[5],
            b: t[6],
        }
        .canonical()
    }

    pub fn starts(&self, grid: &[f64]) -> Vec<Vec<f64>> {
        let (a, b, z) = single_step_envelope(&self.y);
        let n = z.len();
        let mean_z = z.iter().sum::<f64>() / n as f64;
        let mut out = Vec::with_capacity(grid.len() * grid.len());
        for &alpha in grid {
            for &beta in grid {
                let design = DMatrix::from_fn(n, 3, |i, j| match j {
                    0 => (-alpha * self.du[i]).exp(),
                    1 => (-beta * self.dv[i]).exp(),
                    _ => 1.0,
                });
                let zt = nalgebra::DVector::from_column_slice(&z);
                let coef = design
                    .clone()
                    .svd(true, true)
                    .solve(&zt, 1e-12)
                    .ok()
                    .filter(|c| c.iter().all(|v| v.is_finite()));
                let (ca, cb, ce) = match coef {
                    Some(c) => (c[0], c[1], c[2]),
                    None => (0.0, 0.0, mean_z),
                };
                out.push(vec![ca, alpha, cb, beta, ce, a, b]);
            }
        }
        out
    }
}

impl LeastSquares for SingleStepNdProblem {
    fn n_params(&self) -> usize {
        7
    }
    fn n_residuals(&self) -> usize {
        self.y.len()
    }
    fn residuals(&self, t: &[f64], out: &mut [f64]) {
        for i in 0..self.y.len() {
            let z = t[0] * (-t[1] * self.du[i]).exp() + t[2] * (-t[3] * self.dv[i]).exp() + t[4];
            out[i] = t[5] * logistic(z) + t[6] - self.y[i];
        }
    }
    fn jacobian(&self, t: &[f64], out: &mut DMatrix<f64>) {
        for i in 0..self.y.len() {
            let f = (-t[1] * self.du[i]).exp();
            let g = (-t[3] * self.dv[i]).exp();
            let s = logistic(t[0] * f + t[2] * g + t[4]);
            let ds = t[5] * s * (1.0 - s);
            out[(i, 0)] = ds * f;
            out[(i, 1)] = -ds * t[0] * self.du[i] * f;
            out[(i, 2)] = ds * g;
            out[(i, 3)] = -ds * t[2] * self.dv[i] * g;
            out[(i, 4)] = ds;
            out[(i, 5)] = s;
            out[(i, 6)] = 1.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_difference_check<P: LeastSquares>(p: &P, theta: &[f64]) {
        let n = p.n_residuals();
        let k = p.n_params();
        let mut jac = DMatrix::zeros(n, k);
        p.jacobian(theta, &mut jac);
        let mut lo = vec![0.0; n];
        let mut hi = vec![0.0; n];
        for j in 0..k {
            let h = 1e-6 * theta[j].abs().max(1.0);
            let mut t = theta.to_vec();
            t[j] += h;
            p.residuals(&t, &mut hi);
            t[j] -= 2.0 * h;
            p.residuals(&t, &mut lo);
            for i in 0..n {
                let fd = (hi[i] - lo[i]) / (2.0 * h);
                assert!(
                    (fd - jac[(i, j)]).abs() <= 1e-5 * fd.abs().max(1.0),
                    "param {j} residual {i}: fd {fd} vs analytic {}",
                    jac[(i, j)]
                );
            }
        }
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let compute = [1e15, 1e16, 1e17, 1e18];
        let y = [3.0, 2.5, 2.2, 2.1];
        finite_difference_check(&PowerLawProblem::new(&compute, &y, true), &[-0.3, 0.4, 1.9]);
        finite_difference_check(&PowerLawProblem::new(&compute, &y, false), &[0.7, 0.2]);
        let scales = [
            ScalePoint::new(1e7, 1e9),
            ScalePoint::new(3e7, 2e9),
            ScalePoint::new(1e8, 9e9),
            ScalePoint::new(2e8, 1e10),
        ];
        finite_difference_check(&NdProblem::new(&scales, &y), &[-0.5, 0.3, -1.0, 0.25, 1.7]);
        finite_difference_check(
            &SigmoidProblem {
                x: y.to_vec(),
                y: vec![0.3, 0.4, 0.5, 0.55],
            },
            &[0.6, 0.25, -3.0, 2.4],
        );
        finite_difference_check(&SingleStepProblem::new(&compute, &[0.3, 0.4, 0.5, 0.55]), &[-1.5, 0.3, 0.2, 0.6, 0.25]);
        finite_difference_check(
            &SingleStepNdProblem::new(&scales, &[0.3, 0.4, 0.5, 0.55]),
            &[-1.0, 0.3, -0.5, 0.2, 0.1, 0.6, 0.25],
        );
    }

    #[test]
    fn sigmoid_midpoint_and_canonical_form() {
        let s = SigmoidParams {
            a: 0.6,
            b: 0.25,
            k: -8.0,
            l0: 1.2,
        };
        assert!((s.value(1.2) - (0.3 + 0.25)).abs() < 1e-15);
        let flipped = SigmoidParams {
            a: -0.6,
            b: 0.85,
            k: 8.0,
            l0: 1.2,
        };
        let c = flipped.canonical();
        for l in [0.5, 1.0, 1.2, 2.0] {
            assert!((c.value(l) - flipped.value(l)).abs() < 1e-12);
        }
        assert!(c.a >= 0.0);
    }

    #[test]
    fn centered_power_law_reports_plain_a() {
        let compute = [1e15, 1e18];
        let p = PowerLawProblem::new(&compute, &[1.0, 1.0], true);
        let theta = [0.3, 0.5, 2.0];
        let params = p.params(&theta);
        let mut r = [0.0; 2];
        p.residuals(&theta, &mut r);
        for (i, c) in compute.iter().enumerate() {
            assert!(((params.loss(*c) - 1.0) - r[i]).abs() < 1e-12);
        }
    }
}
