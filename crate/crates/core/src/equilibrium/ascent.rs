//! Maximisation of the potential over the reports of a subset of agents.

use super::{SolverConfig, StepRule};
use crate::error::{Error, Result};
use crate::game::{Externality, GameInstance};

/// Consecutive exhausted line searches tolerated before giving up.
const MAX_LINE_SEARCH_FAILURES: usize = 3;
const MIN_STEP: f64 = 1e-14;

pub(crate) struct Ascent<'a> {
    inst: &'a GameInstance,
    omega: &'a [f64],
    /// Agents whose rows are optimised; the rest are held fixed.
    free: Vec<usize>,
    cfg: &'a SolverConfig,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AscentOutcome {
    pub iterations: usize,
    pub residual: f64,
}

impl<'a> Ascent<'a> {
    pub fn new(inst: &'a GameInstance, omega: &'a [f64], free: Vec<usize>, cfg: &'a SolverConfig) -> Self {
        Self { inst, omega, free, cfg }
    }

    fn has_zero_manipulation_kink(&self) -> bool {
        let ext = self.inst.externality();
        ext.variant() == Externality::ConvexSquareSum && ext.scale() > 0.0
    }

    /// Moves `x` (row-major, at least `k` rows) to a maximiser over the free
    /// rows. On failure `x` holds the best iterate found.
    pub fn run(&self, x: &mut [f64]) -> Result<AscentOutcome> {
        if self.has_zero_manipulation_kink() {
            self.run_block_coordinate(x)
        } else {
            self.run_projected_gradient(x)
        }
    }

    fn run_projected_gradient(&self, x: &mut [f64]) -> Result<AscentOutcome> {
        let n = self.inst.n_vars();
        let mut grad = vec![0.0; n];
        let mut trial = x[..n].to_vec();
        let mut trial_grad = vec![0.0; n];
        let alpha = self.inst.cost_model().alpha();
        // The cost alone contributes curvature 2 alpha, so longer steps can
        // only overshoot; near twice this length they mirror the iterate
        // around the optimum without reducing the residual.
        let max_step = 1.0 / (2.0 * alpha);
        let mut step = match self.cfg.step_rule {
            StepRule::Fixed(t) => t,
            StepRule::Backtracking { .. } => max_step,
        };
        let mut phi = self.inst.potential_at(x, self.omega);
        let mut failures = 0;

        for iter in 0..self.cfg.max_iterations {
            self.inst.gradient_at(x, self.omega, &mut grad);
            let residual = self.residual(x, &grad);
            if residual <= self.cfg.kkt_tolerance {
                return Ok(AscentOutcome { iterations: iter, residual });
            }

            match self.cfg.step_rule {
                StepRule::Fixed(t) => {
                    self.project_step(x, &grad, t, &mut trial);
                    x[..n].copy_from_slice(&trial);
                }
                StepRule::Backtracking { shrink, sufficient_increase } => {
                    let slack = 64.0 * f64::EPSILON * (1.0 + phi.abs());
                    let mut t = (step / shrink).min(max_step);
                    let mut accepted = None;
                    let mut last_drop = 0.0;
                    while t >= MIN_STEP {
                        self.project_step(x, &grad, t, &mut trial);
                        let predicted: f64 =
                            (0..n).map(|p| grad[p] * (trial[p] - x[p])).sum();
                        let phi_trial = self.inst.potential_at(&trial, self.omega);
                        if predicted > slack {
                            if phi_trial >= phi + sufficient_increase * predicted {
                                accepted = Some(phi_trial);
                                break;
                            }
                        } else if phi_trial + slack >= phi {
                            // Below roundoff the potential cannot rank the two
                            // points, so judge the step by the optimality residual.
                            self.inst.gradient_at(&trial, self.omega, &mut trial_grad);
                            if self.residual(&trial, &trial_grad) < residual {
                                accepted = Some(phi_trial);
                                break;
                            }
                        }
                        last_drop = phi - phi_trial;
                        t *= shrink;
                    }
                    match accepted {
                        Some(v) => {
                            failures = 0;
                            step = t;
                            x[..n].copy_from_slice(&trial);
                            phi = v;
                        }
                        None => {
                            failures += 1;
                            step = max_step;
                            if failures >= MAX_LINE_SEARCH_FAILURES {
                                if last_drop > slack {
                                    return Err(Error::ModelViolation(format!(
                                        "ascent steps keep decreasing the potential (by {last_drop:.3e}); \
                                         the potential is not concave here"
                                    )));
                                }
                                return Err(self.stalled(x, iter + 1, residual));
                            }
                        }
                    }
                }
            }
        }
        self.finish(x, &mut grad)
    }

    /// Gauss-Seidel sweeps of exact best responses. Used for the square-sum
    /// externality, whose kink at zero manipulation makes the gradient
    /// Lipschitz constant blow up near truthful reports.
    fn run_block_coordinate(&self, x: &mut [f64]) -> Result<AscentOutcome> {
        let mut grad = vec![0.0; self.inst.n_vars()];
        for sweep in 0..self.cfg.max_iterations {
            self.inst.gradient_at(x, self.omega, &mut grad);
            let residual = self.residual(x, &grad);
            if residual <= self.cfg.kkt_tolerance {
                return Ok(AscentOutcome { iterations: sweep, residual });
            }
            for &i in &self.free {
                self.square_sum_best_response(i, x);
            }
        }
        self.finish(x, &mut grad)
    }

    fn finish(&self, x: &[f64], grad: &mut [f64]) -> Result<AscentOutcome> {
        self.inst.gradient_at(x, self.omega, grad);
        let residual = self.residual(x, grad);
        if residual <= self.cfg.kkt_tolerance {
            return Ok(AscentOutcome { iterations: self.cfg.max_iterations, residual });
        }
        Err(self.stalled(x, self.cfg.max_iterations, residual))
    }

    /// Agent `i`'s exact best response under the square-sum externality.
    ///
    /// With the others fixed the agent maximises
    /// `q.u - c |u|^2 - rho |u|` over its box, where `u` is its manipulation,
    /// `c = alpha + s (k - 1)` and `rho = 2 s sum_j |u_j|`. At a solution with
    /// `|u| = a > 0` the report is the box-clipped `q / (2c + rho / a)`, and
    /// the norm of that point increases with `a`, so `a` is found by bisection.
    fn square_sum_best_response(&self, i: usize, x: &mut [f64]) {
        let d = self.inst.dim();
        let own = self.inst.features().row(i);
        let gain = self.inst.gain().value(own);
        let s = self.inst.externality().scale();
        let c = self.inst.cost_model().alpha() + s * (self.inst.active_count() - 1) as f64;
        let rho = self.inst.zero_manipulation_radius(i, x);
        let q: Vec<f64> = self.omega.iter().map(|w| w * gain).collect();
        let report = |mu: f64, l: usize| (own[l] + q[l] / mu).clamp(0.0, 1.0);
        let row = &mut x[i * d..(i + 1) * d];

        let tangent = (0..d).map(|l| tangential(own[l], q[l]).powi(2)).sum::<f64>().sqrt();
        if tangent <= rho {
            row.copy_from_slice(own);
            return;
        }
        if rho == 0.0 {
            (0..d).for_each(|l| row[l] = report(2.0 * c, l));
            return;
        }
        let excess = |a: f64| {
            let mu = 2.0 * c + rho / a;
            (0..d).map(|l| (report(mu, l) - own[l]).powi(2)).sum::<f64>().sqrt() - a
        };
        let (mut lo, mut hi) = (0.0, (d as f64).sqrt());
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if excess(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = 2.0 * c + rho / (0.5 * (lo + hi));
        (0..d).for_each(|l| row[l] = report(mu, l));
    }

    fn stalled(&self, x: &[f64], iterations: usize, residual: f64) -> Error {
        let d = self.inst.dim();
        let rows = self.inst.features().rows();
        let best = nalgebra::DMatrix::from_row_slice(rows, d, &x[..rows * d]);
        Error::NonConvergence { iterations, residual, best: Box::new(best) }
    }

    fn project_step(&self, x: &[f64], grad: &[f64], t: f64, out: &mut [f64]) {
        let d = self.inst.dim();
        for &i in &self.free {
            for l in 0..d {
                let p = i * d + l;
                out[p] = (x[p] + t * grad[p]).clamp(0.0, 1.0);
            }
        }
    }

    /// Largest violation of the first-order optimality conditions over the
    /// free rows.
    fn residual(&self, x: &[f64], grad: &[f64]) -> f64 {
        let d = self.inst.dim();
        let mut worst: f64 = 0.0;
        for &i in &self.free {
            if self.at_truth(i, x) {
                worst = worst.max(self.truthful_violation(i, x, grad));
                continue;
            }
            for l in 0..d {
                let p = i * d + l;
                worst = worst.max(coordinate_violation(x[p], grad[p]));
            }
        }
        worst
    }

    fn at_truth(&self, i: usize, x: &[f64]) -> bool {
        let d = self.inst.dim();
        self.has_zero_manipulation_kink()
            && x[i * d..(i + 1) * d] == *self.inst.features().row(i)
    }

    /// Distance from the kink's subdifferential ball to the tangential part of
    /// the gradient for an agent sitting at its true features.
    fn truthful_violation(&self, i: usize, x: &[f64], grad: &[f64]) -> f64 {
        let d = self.inst.dim();
        let tangent: f64 = (0..d)
            .map(|l| {
                let p = i * d + l;
                let g = tangential(x[p], grad[p]);
                g * g
            })
            .sum::<f64>()
            .sqrt();
        (tangent - self.inst.zero_manipulation_radius(i, x)).max(0.0)
    }
}

/// Component of an ascent direction that stays feasible at `x`.
fn tangential(x: f64, g: f64) -> f64 {
    if (x >= 1.0 && g > 0.0) || (x <= 0.0 && g < 0.0) {
        0.0
    } else {
        g
    }
}

/// KKT violation of one box-constrained coordinate with duals recovered from
/// the gradient.
pub(crate) fn coordinate_violation(x: f64, g: f64) -> f64 {
    if x >= 1.0 {
        (-g).max(0.0)
    } else if x <= 0.0 {
        g.max(0.0)
    } else {
        g.abs()
    }
}
