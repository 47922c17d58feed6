//! Damped least squares (Levenberg-Marquardt with Marquardt diagonal scaling).

use nalgebra::{DMatrix, DVector};

/// A nonlinear least-squares problem with an analytic Jacobian.
pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;
    /// `out[i] = model_i(theta) - observed_i`.
    fn residuals(&self, theta: &[f64], out: &mut [f64]);
    /// `out[(i, j)] = d residual_i / d theta_j`.
    fn jacobian(&self, theta: &[f64], out: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    /// Cap on trial steps (accepted or rejected) per start.
    pub max_iterations: usize,
    /// Converged once an accepted step lowers SSE by less than this fraction.
    pub rel_tolerance: f64,
    pub initial_damping: f64,
    /// Damping above this means no step can lower SSE any further.
    pub max_damping: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            rel_tolerance: 1e-10,
            initial_damping: 1e-3,
            max_damping: 1e16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub theta: Vec<f64>,
    pub sse: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn sse_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

pub fn minimize<P: LeastSquares + ?Sized>(problem: &P, theta0: &[f64], cfg: &LmConfig) -> LmOutcome {
    let n = problem.n_residuals();
    let p = problem.n_params();
    let mut theta = theta0.to_vec();
    let mut r = vec![0.0; n];
    problem.residuals(&theta, &mut r);
    let mut sse = sse_of(&r);
    if !sse.is_finite() {
        return LmOutcome {
            theta,
            sse: f64::INFINITY,
            converged: false,
            iterations: 0,
        };
    }
    if sse == 0.0 {
        return LmOutcome {
            theta,
            sse,
            converged: true,
            iterations: 0,
        };
    }

    let mut jac = DMatrix::zeros(n, p);
    let mut trial = vec![0.0; p];
    let mut r_trial = vec![0.0; n];
    let mut lambda = cfg.initial_damping;
    let mut iterations = 0;

    loop {
        problem.jacobian(&theta, &mut jac);
        let rv = DVector::from_column_slice(&r);
        let grad = jac.tr_mul(&rv);
        let hess = jac.tr_mul(&jac);
        let max_diag = (0..p).map(|j| hess[(j, j)]).fold(0.0_f64, f64::max);
        let floor = (max_diag * 1e-12).max(1e-300);

        loop {
            if iterations >= cfg.max_iterations {
                return LmOutcome {
                    theta,
                    sse,
                    converged: false,
                    iterations,
                };
            }
            iterations += 1;

            let mut damped = hess.clone();
            for j in 0..p {
                damped[(j, j)] += lambda * hess[(j, j)].max(floor);
            }
            let step = damped.cholesky().map(|c| c.solve(&(-&grad)));
            let accepted = match step {
                Some(delta) if delta.iter().all(|d| d.is_finite()) => {
                    for j in 0..p {
                        trial[j] = theta[j] + delta[j];
                    }
                    problem.residuals(&trial, &mut r_trial);
                    let s = sse_of(&r_trial);
                    (s.is_finite() && s < sse).then_some(s)
                }
                _ => None,
            };

            match accepted {
                Some(new_sse) => {
                    let rel = (sse - new_sse) / sse;
                    theta.copy_from_slice(&trial);
                    r.copy_from_slice(&r_trial);
                    sse = new_sse;
                    lambda = (lambda / 10.0).max(1e-15);
                    if rel < cfg.rel_tolerance || sse == 0.0 {
                        return LmOutcome {
                            theta,
                            sse,
                            converged: true,
                            iterations,
                        };
                    }
                    break;
                }
                None => {
                    lambda *= 10.0;
                    if lambda > cfg.max_damping {
                        // Even a vanishing step cannot lower SSE: stationary point.
                        return LmOutcome {
                            theta,
                            sse,
                            converged: true,
                            iterations,
                        };
                    }
                }
            }
        }
    }
}
