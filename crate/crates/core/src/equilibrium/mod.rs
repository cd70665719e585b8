//! Unique pure Nash equilibrium as the box-constrained maximiser of the
//! potential, plus the verification oracles used to cross-check it.

mod ascent;
mod oracle;

pub use oracle::{best_response, br_dynamics, brute_force_ne, verify_pne, BrDynamics, PneCheck};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::game::{ClassifierParams, FeatureMatrix, GameInstance};
use ascent::{coordinate_violation, Ascent};

/// Multistart solutions farther apart than this mark the result non-unique.
pub const UNIQUENESS_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    Fixed(f64),
    Backtracking { shrink: f64, sufficient_increase: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub kkt_tolerance: f64,
    pub max_iterations: usize,
    pub step_rule: StepRule,
    pub multistart_count: usize,
    /// Seeds the random starting points of multistart solves.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kkt_tolerance: 1e-8,
            max_iterations: 10_000,
            step_rule: StepRule::Backtracking { shrink: 0.5, sufficient_increase: 0.25 },
            multistart_count: 1,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kkt_tolerance > 0.0) {
            return Err(Error::Config("kkt_tolerance must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        match self.step_rule {
            StepRule::Fixed(t) if !(t > 0.0) => {
                return Err(Error::Config("fixed step must be positive".into()))
            }
            StepRule::Backtracking { shrink, sufficient_increase }
                if !(shrink > 0.0 && shrink < 1.0 && (0.0..1.0).contains(&sufficient_increase)) =>
            {
                return Err(Error::Config("backtracking needs shrink in (0,1) and constant in [0,1)".into()))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn with_tolerance(&self, kkt_tolerance: f64) -> Self {
        Self { kkt_tolerance, ..self.clone() }
    }

    pub fn with_multistart(&self, multistart_count: usize) -> Self {
        Self { multistart_count, ..self.clone() }
    }
}

/// Equilibrium reports with recovered bound multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumResult {
    /// All `k_max` rows; inert rows hold the true features.
    pub reports: FeatureMatrix,
    /// Multipliers of the upper bounds, `k x d`.
    pub dual_upper: DMatrix<f64>,
    /// Multipliers of the lower bounds, `k x d`.
    pub dual_lower: DMatrix<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// False when multistart solves disagreed.
    pub unique: bool,
}

impl EquilibriumResult {
    /// Equilibrium report of agent `i`.
    pub fn report(&self, i: usize) -> &[f64] {
        self.reports.row(i)
    }
}

/// Solves for the equilibrium starting from truthful reports.
pub fn solve_ne(
    inst: &GameInstance,
    omega: &ClassifierParams,
    cfg: &SolverConfig,
) -> Result<EquilibriumResult> {
    solve_ne_from(inst, omega, inst.features(), cfg)
}

/// Solves for the equilibrium from a given feasible start. Additional
/// multistart solves begin at uniformly random reports.
pub fn solve_ne_from(
    inst: &GameInstance,
    omega: &ClassifierParams,
    start: &FeatureMatrix,
    cfg: &SolverConfig,
) -> Result<EquilibriumResult> {
    cfg.validate()?;
    inst.check_omega(omega)?;
    inst.check_reports(start)?;
    let k = inst.active_count();
    let ascent = Ascent::new(inst, omega.omega(), (0..k).collect(), cfg);

    let mut x = start.as_slice().to_vec();
    let outcome = ascent.run(&mut x)?;
    let mut unique = true;
    if cfg.multistart_count > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let n = inst.n_vars();
        for _ in 1..cfg.multistart_count {
            let mut y = start.as_slice().to_vec();
            y[..n].iter_mut().for_each(|v| *v = rng.gen());
            ascent.run(&mut y)?;
            let gap = x[..n]
                .iter()
                .zip(&y[..n])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if gap > UNIQUENESS_TOLERANCE {
                unique = false;
            }
        }
    }
    let reports = inst.reports_from_flat(&x[..inst.n_vars()])?;
    let (dual_upper, dual_lower) = duals_at(inst, omega.omega(), reports.as_slice());
    Ok(EquilibriumResult {
        reports,
        dual_upper,
        dual_lower,
        kkt_residual: outcome.residual,
        iterations: outcome.iterations,
        converged: true,
        unique,
    })
}

/// Bound multipliers from the gradient at a candidate: zero in the interior,
/// the clipped gradient at an active bound.
pub fn recover_duals(
    inst: &GameInstance,
    omega: &ClassifierParams,
    candidate: &FeatureMatrix,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    inst.check_omega(omega)?;
    inst.check_reports(candidate)?;
    Ok(duals_at(inst, omega.omega(), candidate.as_slice()))
}

fn duals_at(inst: &GameInstance, omega: &[f64], x: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (k, d) = (inst.active_count(), inst.dim());
    let mut g = vec![0.0; k * d];
    inst.gradient_at(x, omega, &mut g);
    let mut upper = DMatrix::zeros(k, d);
    let mut lower = DMatrix::zeros(k, d);
    for i in 0..k {
        for l in 0..d {
            let p = i * d + l;
            if x[p] >= 1.0 {
                upper[(i, l)] = g[p].max(0.0);
            } else if x[p] <= 0.0 {
                lower[(i, l)] = (-g[p]).max(0.0);
            }
        }
    }
    (upper, lower)
}

/// Maximum KKT violation of a candidate with duals recovered from the
/// gradient (smooth first-order conditions only).
pub fn kkt_residual(inst: &GameInstance, omega: &ClassifierParams, candidate: &FeatureMatrix) -> Result<f64> {
    inst.check_omega(omega)?;
    inst.check_reports(candidate)?;
    let x = candidate.as_slice();
    let mut g = vec![0.0; inst.n_vars()];
    inst.gradient_at(x, omega.omega(), &mut g);
    Ok(g.iter().enumerate().map(|(p, &gp)| coordinate_violation(x[p], gp)).fold(0.0, f64::max))
}
