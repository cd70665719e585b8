use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::equilibrium::EquilibriumResult;
use crate::error::{Error, Result};
use crate::game::{ClassifierParams, Externality, FeatureMatrix, GameInstance};

/// Multiplier applied to the largest sampled externality gradient.
pub const LIPSCHITZ_SAFETY_FACTOR: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzConstants {
    /// Half the smallest curvature magnitude of the potential in the reports.
    pub c: f64,
    /// Largest spectral norm of the report/weight cross Hessian, plus one.
    pub gamma: f64,
    /// `gamma / c`, a Lipschitz constant of the equilibrium in the weights.
    pub eta: f64,
}

/// Estimates the constants over every pair of sampled weights and report
/// profiles. The curvature uses the least negative eigenvalue of the report
/// Hessian.
pub fn lipschitz_constants(
    inst: &GameInstance,
    omegas: &[ClassifierParams],
    reports: &[FeatureMatrix],
) -> Result<LipschitzConstants> {
    let ext = inst.externality();
    if ext.variant() == Externality::ConvexSquareSum && ext.scale() > 0.0 {
        return Err(Error::Unsupported(
            "curvature constants need a twice differentiable externality".into(),
        ));
    }
    if reports.is_empty() || omegas.is_empty() {
        return Err(Error::Usage("need at least one weight and one report sample".into()));
    }
    let mut min_curvature = f64::INFINITY;
    for (w, r) in omegas.iter().flat_map(|w| reports.iter().map(move |r| (w, r))) {
        let h = inst.potential_hessian(r, w)?;
        let top = h.symmetric_eigenvalues().max();
        if !(top < 0.0) {
            return Err(Error::ModelViolation(format!(
                "potential is not strictly concave at a sample (largest eigenvalue {top:.3e})"
            )));
        }
        min_curvature = min_curvature.min(-top);
    }
    let c = 0.5 * min_curvature;
    let gamma = spectral_norm(&inst.cross_hessian()) + 1.0;
    Ok(LipschitzConstants { c, gamma, eta: gamma / c })
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().singular_values().max()
}

/// `ceil((8 / eps^2) * (ln(e / gamma) + d * ln(16 lambda (d + eta r) gamma / eps)))`,
/// floored at zero.
pub fn sample_complexity(
    eps: f64,
    gamma: f64,
    d: usize,
    lambda: f64,
    eta: f64,
    r: f64,
) -> Result<u64> {
    for (name, v) in [("eps", eps), ("gamma", gamma), ("lambda", lambda), ("eta", eta), ("r", r)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("{name} must be positive and finite, got {v}")));
        }
    }
    if d == 0 {
        return Err(Error::Domain("d must be positive".into()));
    }
    if eps >= 1.0 {
        return Err(Error::Domain(format!("eps must be below 1, got {eps}")));
    }
    let df = d as f64;
    let first = std::f64::consts::E / gamma;
    let second = 16.0 * lambda * (df + eta * r) * gamma / eps;
    if !(first > 0.0 && second > 0.0) {
        return Err(Error::Domain("logarithm argument is not positive".into()));
    }
    let n = (8.0 / (eps * eps)) * (first.ln() + df * second.ln());
    if !n.is_finite() {
        return Err(Error::Domain("bound overflows".into()));
    }
    Ok(n.max(0.0).ceil() as u64)
}

/// 1.5 times the largest norm of an agent's externality gradient with respect
/// to its peers' true features, over random features and reports in the box.
pub fn estimate_externality_lipschitz<R: Rng + ?Sized>(
    inst: &GameInstance,
    n_points: usize,
    rng: &mut R,
) -> f64 {
    let (k, d) = (inst.active_count(), inst.dim());
    let mut truth = vec![0.0; k * d];
    let mut reports = vec![0.0; k * d];
    let mut best: f64 = 0.0;
    for _ in 0..n_points {
        truth.iter_mut().for_each(|v| *v = rng.gen());
        reports.iter_mut().for_each(|v| *v = rng.gen());
        let i = rng.gen_range(0..k);
        let g = inst.peer_gradient_at(i, &reports, &truth);
        best = best.max(g.iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    LIPSCHITZ_SAFETY_FACTOR * best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImperfectInfoReport {
    /// Largest improvement of the biased utility over the equilibrium report.
    pub max_gain: f64,
    pub worst_agent: usize,
    /// `2 lambda ||b_i||` for every agent.
    pub bounds: Vec<f64>,
    /// Largest biased-utility improvement for every agent.
    pub gains: Vec<f64>,
    pub satisfied: bool,
}

/// Evaluates each agent's utility with its beliefs about peers' true features
/// shifted by `biases[i]` (a `k x d` matrix whose row `i` is ignored), at the
/// equilibrium report and at `n_deviations` random reports, and compares the
/// best improvement with `2 lambda_ext ||b_i||`.
pub fn imperfect_info_check<R: Rng + ?Sized>(
    inst: &GameInstance,
    omega: &ClassifierParams,
    eq: &EquilibriumResult,
    biases: &[DMatrix<f64>],
    lambda_ext: f64,
    n_deviations: usize,
    rng: &mut R,
) -> Result<ImperfectInfoReport> {
    inst.check_omega(omega)?;
    let (k, d) = (inst.active_count(), inst.dim());
    if biases.len() != k {
        return Err(Error::Dimension { expected: k, got: biases.len() });
    }
    if let Some(b) = biases.iter().find(|b| b.nrows() != k || b.ncols() != d) {
        return Err(Error::Dimension { expected: k * d, got: b.nrows() * b.ncols() });
    }
    let w = omega.omega();
    let truth = inst.features().as_slice();
    let local = Normal::new(0.0, 0.05).expect("valid stddev");
    let mut gains = Vec::with_capacity(k);
    let mut bounds = Vec::with_capacity(k);
    for (i, bias) in biases.iter().enumerate() {
        let mut believed = truth[..k * d].to_vec();
        let mut norm2 = 0.0;
        for j in (0..k).filter(|&j| j != i) {
            for l in 0..d {
                believed[j * d + l] -= bias[(j, l)];
                norm2 += bias[(j, l)] * bias[(j, l)];
            }
        }
        let mut x = eq.reports.as_slice()[..k * d].to_vec();
        let at_eq = inst.utility_at(i, &x, w, &believed);
        let pne: Vec<f64> = x[i * d..(i + 1) * d].to_vec();
        let mut best = 0.0f64;
        for n in 0..n_deviations {
            for l in 0..d {
                // alternate global draws with draws near the equilibrium
                x[i * d + l] = if n % 2 == 0 {
                    rng.gen()
                } else {
                    (pne[l] + local.sample(rng)).clamp(0.0, 1.0)
                };
            }
            best = best.max(inst.utility_at(i, &x, w, &believed) - at_eq);
        }
        gains.push(best);
        bounds.push(2.0 * lambda_ext * norm2.sqrt());
    }
    let (worst_agent, max_gain) = gains
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    let satisfied = gains.iter().zip(&bounds).all(|(g, b)| g <= b);
    Ok(ImperfectInfoReport { max_gain, worst_agent, bounds, gains, satisfied })
}
