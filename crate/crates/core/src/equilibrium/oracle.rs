use super::ascent::Ascent;
use super::SolverConfig;
use crate::error::{Error, Result};
use crate::game::{ClassifierParams, FeatureMatrix, GameInstance};

/// Evaluation budget for exhaustive grid search.
pub const BRUTE_FORCE_BUDGET: u64 = 1 << 26;

/// Agent `i`'s utility-maximising report given the other rows of `reports`.
/// Row `i` of `reports` is the warm start.
pub fn best_response(
    inst: &GameInstance,
    i: usize,
    reports: &FeatureMatrix,
    omega: &ClassifierParams,
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    inst.check_agent(i)?;
    inst.check_reports(reports)?;
    inst.check_omega(omega)?;
    cfg.validate()?;
    let mut x = reports.as_slice().to_vec();
    best_response_in_place(inst, i, &mut x, omega.omega(), cfg)?;
    let d = inst.dim();
    Ok(x[i * d..(i + 1) * d].to_vec())
}

fn best_response_in_place(
    inst: &GameInstance,
    i: usize,
    x: &mut [f64],
    omega: &[f64],
    cfg: &SolverConfig,
) -> Result<()> {
    // Holding the others fixed, the potential differs from agent i's utility
    // by a constant, so ascending it on row i is the best-response problem.
    Ascent::new(inst, omega, vec![i], cfg).run(x).map(|_| ())
}

/// Result of sequential best-response play.
#[derive(Debug, Clone, PartialEq)]
pub struct BrDynamics {
    pub reports: FeatureMatrix,
    /// Potential at the start and after every best response that moved.
    pub potential_trace: Vec<f64>,
    pub rounds: usize,
}

/// Round-robin best responses until no agent moves by more than the move
/// tolerance (`100 * kkt_tolerance`, at least `1e-10`).
pub fn br_dynamics(
    inst: &GameInstance,
    omega: &ClassifierParams,
    start: &FeatureMatrix,
    cfg: &SolverConfig,
) -> Result<BrDynamics> {
    inst.check_reports(start)?;
    inst.check_omega(omega)?;
    cfg.validate()?;
    let (k, d) = (inst.active_count(), inst.dim());
    let move_tol = (100.0 * cfg.kkt_tolerance).max(1e-10);
    let w = omega.omega();
    let mut x = start.as_slice().to_vec();
    let mut trace = vec![inst.potential_at(&x, w)];
    let mut scratch = x.clone();
    for round in 0..cfg.max_iterations {
        let mut moved = false;
        for i in 0..k {
            scratch.copy_from_slice(&x);
            best_response_in_place(inst, i, &mut scratch, w, cfg)?;
            let shift = scratch[i * d..(i + 1) * d]
                .iter()
                .zip(&x[i * d..(i + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if shift > move_tol {
                x[i * d..(i + 1) * d].copy_from_slice(&scratch[i * d..(i + 1) * d]);
                trace.push(inst.potential_at(&x, w));
                moved = true;
            }
        }
        if !moved {
            return Ok(BrDynamics {
                reports: FeatureMatrix::from_row_major(start.rows(), d, x)?,
                potential_trace: trace,
                rounds: round + 1,
            });
        }
    }
    let residual = crate::equilibrium::kkt_residual(
        inst,
        omega,
        &FeatureMatrix::from_row_major(start.rows(), d, x.clone())?,
    )?;
    Err(Error::NonConvergence {
        iterations: cfg.max_iterations,
        residual,
        best: Box::new(nalgebra::DMatrix::from_row_slice(start.rows(), d, &x)),
    })
}

/// Outcome of checking every agent's unilateral deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PneCheck {
    pub is_pne: bool,
    pub worst_agent: usize,
    pub worst_gain: f64,
}

/// True iff no agent's best response improves its utility by more than `slack`.
pub fn verify_pne(
    inst: &GameInstance,
    omega: &ClassifierParams,
    candidate: &FeatureMatrix,
    slack: f64,
    cfg: &SolverConfig,
) -> Result<PneCheck> {
    inst.check_reports(candidate)?;
    inst.check_omega(omega)?;
    let truth = inst.features().as_slice();
    let w = omega.omega();
    let mut worst = PneCheck { is_pne: true, worst_agent: 0, worst_gain: f64::NEG_INFINITY };
    for i in 0..inst.active_count() {
        let mut x = candidate.as_slice().to_vec();
        let before = inst.utility_at(i, &x, w, truth);
        best_response_in_place(inst, i, &mut x, w, cfg)?;
        let gain = inst.utility_at(i, &x, w, truth) - before;
        if gain > worst.worst_gain {
            worst.worst_gain = gain;
            worst.worst_agent = i;
        }
    }
    worst.is_pne = worst.worst_gain <= slack;
    Ok(worst)
}

/// Grid point maximising the potential, over the grid `{0, h, 2h, ..., 1}`
/// in every active report coordinate.
pub fn brute_force_ne(
    inst: &GameInstance,
    omega: &ClassifierParams,
    grid_resolution: f64,
) -> Result<FeatureMatrix> {
    inst.check_omega(omega)?;
    if !(grid_resolution > 0.0 && grid_resolution <= 1.0) {
        return Err(Error::Usage(format!("grid resolution {grid_resolution} not in (0, 1]")));
    }
    let n = inst.n_vars();
    if n > 6 {
        return Err(Error::Usage(format!("brute force limited to 6 report variables, got {n}")));
    }
    let steps = (1.0 / grid_resolution).round() as u64;
    let points = steps + 1;
    let total = (0..n).try_fold(1u64, |acc, _| acc.checked_mul(points));
    match total {
        Some(t) if t <= BRUTE_FORCE_BUDGET => {}
        _ => {
            return Err(Error::Usage(format!(
                "{points}^{n} grid evaluations exceed the budget of {BRUTE_FORCE_BUDGET}"
            )))
        }
    }
    let grid = |c: u64| c as f64 / steps as f64;
    let w = omega.omega();
    let mut x = inst.features().as_slice().to_vec();
    let mut counter = vec![0u64; n];
    x[..n].iter_mut().for_each(|v| *v = 0.0);
    let mut best = (f64::NEG_INFINITY, x.clone());
    loop {
        let phi = inst.potential_at(&x, w);
        if phi > best.0 {
            best = (phi, x.clone());
        }
        let mut p = 0;
        loop {
            if p == n {
                return FeatureMatrix::from_row_major(inst.features().rows(), inst.dim(), best.1);
            }
            counter[p] += 1;
            if counter[p] < points {
                x[p] = grid(counter[p]);
                break;
            }
            counter[p] = 0;
            x[p] = 0.0;
            p += 1;
        }
    }
}
