//! Derivatives of the equilibrium map with respect to the classifier weights.
//!
//! At a non-degenerate equilibrium the free report coordinates satisfy
//! `grad Phi = 0` while clamped coordinates stay at their bound, so
//! differentiating the stationarity system on the free block gives
//! `H_FF J_F = -C_F` with `H` the report Hessian of the potential and `C` the
//! report/weight cross Hessian. Clamped rows of the Jacobian are zero.

use nalgebra::DMatrix;

use crate::equilibrium::{solve_ne, solve_ne_from, EquilibriumResult, SolverConfig};
use crate::error::{Error, Result};
use crate::game::{dot, ClassifierParams, GameInstance};

/// Step of the one-sided differences used at degenerate equilibria.
pub const FALLBACK_STEP: f64 = 1e-6;
/// Solver tolerance used for finite-difference solves.
const FD_TOLERANCE: f64 = 1e-12;

/// `d vec(reports) / d omega` for the active agents.
#[derive(Debug, Clone, PartialEq)]
pub struct NeJacobian {
    /// `(k d) x d`.
    pub matrix: DMatrix<f64>,
    /// Flattened coordinates at a bound whose multiplier is (numerically) zero.
    pub degenerate_coords: Vec<usize>,
    pub valid: bool,
}

impl NeJacobian {
    /// The `d x d` block of agent `i`.
    pub fn agent_block(&self, i: usize) -> DMatrix<f64> {
        let d = self.matrix.ncols();
        self.matrix.rows(i * d, d).into_owned()
    }
}

/// Per-report loss on the score `z` for label `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossFunction {
    Logistic,
    Hinge,
}

impl LossFunction {
    /// Bound on `|d loss / d z|`.
    pub const LIPSCHITZ: f64 = 1.0;

    pub fn value(self, z: f64, y: f64) -> f64 {
        let m = y * z;
        match self {
            // ln(1 + e^{-m}) without overflow
            LossFunction::Logistic => {
                if m > 0.0 {
                    (-m).exp().ln_1p()
                } else {
                    -m + m.exp().ln_1p()
                }
            }
            LossFunction::Hinge => (1.0 - m).max(0.0),
        }
    }

    pub fn derivative(self, z: f64, y: f64) -> f64 {
        let m = y * z;
        match self {
            LossFunction::Logistic => {
                let s = if m >= 0.0 {
                    let e = (-m).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + m.exp())
                };
                -y * s
            }
            LossFunction::Hinge => {
                if m < 1.0 {
                    -y
                } else {
                    0.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossFunction::Logistic => "logistic",
            LossFunction::Hinge => "hinge",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "logistic" => Some(LossFunction::Logistic),
            "hinge" => Some(LossFunction::Hinge),
            _ => None,
        }
    }
}

/// Jacobian of the equilibrium reports by implicit differentiation of the
/// reduced KKT system. Coordinates at a bound with multiplier at most
/// `10 * kkt_tolerance` are degenerate; their rows are NaN and `valid` is false.
pub fn ne_jacobian(
    inst: &GameInstance,
    omega: &ClassifierParams,
    eq: &EquilibriumResult,
    cfg: &SolverConfig,
) -> Result<NeJacobian> {
    if !eq.converged {
        return Err(Error::Usage("equilibrium did not converge".into()));
    }
    inst.check_omega(omega)?;
    let (k, d) = (inst.active_count(), inst.dim());
    let dual_tol = 10.0 * cfg.kkt_tolerance;
    let x = eq.reports.as_slice();

    let mut free = Vec::new();
    let mut degenerate = Vec::new();
    for p in 0..k * d {
        let (i, l) = (p / d, p % d);
        if x[p] >= 1.0 {
            if eq.dual_upper[(i, l)] <= dual_tol {
                degenerate.push(p);
            }
        } else if x[p] <= 0.0 {
            if eq.dual_lower[(i, l)] <= dual_tol {
                degenerate.push(p);
            }
        } else {
            free.push(p);
        }
    }

    let mut matrix = DMatrix::zeros(k * d, d);
    if !free.is_empty() {
        let h = inst.hessian_at(x).ok_or_else(|| {
            Error::Unsupported(
                "square-sum externality has no Hessian where an agent reports truthfully".into(),
            )
        })?;
        let c = inst.cross_hessian();
        let nf = free.len();
        let neg_h = DMatrix::from_fn(nf, nf, |a, b| -h[(free[a], free[b])]);
        let rhs = DMatrix::from_fn(nf, d, |a, l| c[(free[a], l)]);
        let chol = neg_h.cholesky().ok_or_else(|| {
            Error::Numerical("free-block Hessian is not negative definite".into())
        })?;
        let jf = chol.solve(&rhs);
        for (a, &p) in free.iter().enumerate() {
            for l in 0..d {
                matrix[(p, l)] = jf[(a, l)];
            }
        }
    }
    for &p in &degenerate {
        for l in 0..d {
            matrix[(p, l)] = f64::NAN;
        }
    }
    Ok(NeJacobian { valid: degenerate.is_empty(), degenerate_coords: degenerate, matrix })
}

/// Central differences of the equilibrium reports in each weight coordinate.
/// Perturbed solves are warm-started at the base equilibrium and run to a
/// tolerance of `1e-12`.
pub fn fd_jacobian(
    inst: &GameInstance,
    omega: &ClassifierParams,
    h: f64,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    if !(h > 0.0) {
        return Err(Error::Usage("finite-difference step must be positive".into()));
    }
    let tight = cfg.with_tolerance(cfg.kkt_tolerance.min(FD_TOLERANCE)).with_multistart(1);
    let base = solve_ne(inst, omega, &tight)?;
    let (n, d) = (inst.n_vars(), inst.dim());
    let mut jac = DMatrix::zeros(n, d);
    for l in 0..d {
        let plus = solve_shifted(inst, omega, &base, l, h, &tight)?;
        let minus = solve_shifted(inst, omega, &base, l, -h, &tight)?;
        for p in 0..n {
            jac[(p, l)] = (plus[p] - minus[p]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Forward differences from an already solved equilibrium.
pub fn fd_jacobian_one_sided(
    inst: &GameInstance,
    omega: &ClassifierParams,
    eq: &EquilibriumResult,
    h: f64,
    cfg: &SolverConfig,
) -> Result<DMatrix<f64>> {
    let tight = cfg.with_tolerance(cfg.kkt_tolerance.min(FD_TOLERANCE)).with_multistart(1);
    let (n, d) = (inst.n_vars(), inst.dim());
    let base = solve_ne_from(inst, omega, &eq.reports, &tight)?;
    let mut jac = DMatrix::zeros(n, d);
    for l in 0..d {
        let plus = solve_shifted(inst, omega, &base, l, h, &tight)?;
        for p in 0..n {
            jac[(p, l)] = (plus[p] - base.reports.as_slice()[p]) / h;
        }
    }
    Ok(jac)
}

fn solve_shifted(
    inst: &GameInstance,
    omega: &ClassifierParams,
    base: &EquilibriumResult,
    coord: usize,
    h: f64,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let mut w = omega.omega().to_vec();
    w[coord] += h;
    let shifted = ClassifierParams::unconstrained(w);
    let eq = solve_ne_from(inst, &shifted, &base.reports, cfg)?;
    Ok(eq.reports.as_slice()[..inst.n_vars()].to_vec())
}

/// Strategic loss of one instance and its gradient in the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Whether the Jacobian came from finite differences (degenerate point or
    /// a truthful agent under the square-sum externality).
    pub fallback: bool,
}

/// Mean loss over the active agents at the equilibrium and its gradient,
/// `(1/k) sum_i l'(z_i) (J_i^T omega + x_i)` with `z_i = <x_i, omega>`.
pub fn loss_gradient(
    inst: &GameInstance,
    omega: &ClassifierParams,
    loss: LossFunction,
    cfg: &SolverConfig,
) -> Result<LossGradient> {
    let eq = solve_ne(inst, omega, cfg)?;
    loss_gradient_at(inst, omega, &eq, loss, cfg)
}

pub fn loss_gradient_at(
    inst: &GameInstance,
    omega: &ClassifierParams,
    eq: &EquilibriumResult,
    loss: LossFunction,
    cfg: &SolverConfig,
) -> Result<LossGradient> {
    let (jac, fallback) = match ne_jacobian(inst, omega, eq, cfg) {
        Ok(j) if j.valid => (j.matrix, false),
        Ok(_) | Err(Error::Unsupported(_)) => {
            (fd_jacobian_one_sided(inst, omega, eq, FALLBACK_STEP, cfg)?, true)
        }
        Err(e) => return Err(e),
    };
    let (k, d) = (inst.active_count(), inst.dim());
    let w = omega.omega();
    let mut grad = vec![0.0; d];
    let mut value = 0.0;
    for i in 0..k {
        let xi = eq.report(i);
        let y = inst.labels().get(i);
        let z = dot(xi, w);
        value += loss.value(z, y);
        let dl = loss.derivative(z, y);
        for l in 0..d {
            // (J_i^T omega)_l = sum_m J[(i d + m, l)] omega_m
            let jt_w: f64 = (0..d).map(|m| jac[(i * d + m, l)] * w[m]).sum();
            grad[l] += dl * (jt_w + xi[l]);
        }
    }
    let kf = k as f64;
    grad.iter_mut().for_each(|g| *g /= kf);
    Ok(LossGradient { value: value / kf, gradient: grad, fallback })
}
