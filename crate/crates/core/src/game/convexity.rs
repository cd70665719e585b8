use nalgebra::Matrix2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CostModel, Externality, ExternalityModel};

/// Minimum sampled curvature of the per-pair cumulative impact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityReport {
    /// Minimum of the closed-form per-pair Hessian determinant.
    pub min_determinant: f64,
    /// Minimum eigenvalue of the exact per-pair Hessian.
    pub min_eigenvalue: f64,
    pub is_strictly_convex_on_samples: bool,
}

/// Closed-form determinant of the per-pair Hessian of the cumulative impact,
/// scaled by `k - 1`, for one feature coordinate.
///
/// Proportional: `4a^2 + 4ab ui^2 + 4ab uj^2 - 12 b^2 ui^2 uj^2` with
/// `ui, uj` the two manipulations. Congestion: `4a^2 + 16ab e^{-u^2} u^2
/// + 4 b^2 e^{-2u^2} (4u^2 - 2)` with `u = x'_i - x'_j` (`uj` unused).
/// Square-sum (one coordinate, both agents manipulating): `4a^2 + 8ab`.
pub fn pair_hessian_determinant(variant: Externality, alpha: f64, beta: f64, ui: f64, uj: f64) -> f64 {
    let (a, b) = (alpha, beta);
    match variant {
        Externality::Proportional => {
            let (si, sj) = (ui * ui, uj * uj);
            4.0 * a * a + 4.0 * a * b * si + 4.0 * a * b * sj - 12.0 * b * b * si * sj
        }
        Externality::Congestion => {
            let u2 = ui * ui;
            let e = (-u2).exp();
            4.0 * a * a + 16.0 * a * b * e * u2 + 4.0 * b * b * e * e * (4.0 * u2 - 2.0)
        }
        Externality::ConvexSquareSum => 4.0 * a * a + 8.0 * a * b,
    }
}

/// Exact second derivatives of `a ui^2 + a uj^2 + b t(ui, uj)` for one
/// coordinate of one pair. For congestion, `ui` is the report gap and both
/// reports enter through it; for square-sum the manipulations must be nonzero.
pub fn pair_hessian(variant: Externality, alpha: f64, beta: f64, ui: f64, uj: f64) -> Matrix2<f64> {
    let (a, b) = (alpha, beta);
    match variant {
        Externality::Proportional => Matrix2::new(
            2.0 * a + 2.0 * b * uj * uj,
            4.0 * b * ui * uj,
            4.0 * b * ui * uj,
            2.0 * a + 2.0 * b * ui * ui,
        ),
        Externality::Congestion => {
            let c = b * (4.0 * ui * ui - 2.0) * (-ui * ui).exp();
            Matrix2::new(2.0 * a + c, -c, -c, 2.0 * a + c)
        }
        Externality::ConvexSquareSum => {
            let cross = 2.0 * b * (ui.signum() * uj.signum());
            Matrix2::new(2.0 * a + 2.0 * b, cross, cross, 2.0 * a + 2.0 * b)
        }
    }
}

/// Samples true and reported scalar features uniformly in `[0, 1]` and
/// records the smallest per-pair determinant and eigenvalue.
pub fn check_convexity_threshold(
    model: &ExternalityModel,
    cost: &CostModel,
    n_samples: usize,
    seed: u64,
) -> ConvexityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (alpha, beta) = (cost.alpha(), model.beta());
    let variant = model.variant();
    let mut min_det = f64::INFINITY;
    let mut min_eig = f64::INFINITY;
    for _ in 0..n_samples.max(1) {
        let (xi, ri, xj, rj): (f64, f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen(), rng.gen());
        let (ui, uj) = match variant {
            Externality::Congestion => (ri - rj, 0.0),
            _ => (ri - xi, rj - xj),
        };
        if variant == Externality::ConvexSquareSum && (ui == 0.0 || uj == 0.0) {
            continue;
        }
        min_det = min_det.min(pair_hessian_determinant(variant, alpha, beta, ui, uj));
        let h = pair_hessian(variant, alpha, beta, ui, uj);
        min_eig = min_eig.min(h.symmetric_eigenvalues().min());
    }
    ConvexityReport {
        min_determinant: min_det,
        min_eigenvalue: min_eig,
        is_strictly_convex_on_samples: min_det > 0.0 && min_eig > 0.0,
    }
}
