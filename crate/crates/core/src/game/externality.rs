use crate::error::{Error, Result};

/// Pairwise externality families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Externality {
    /// `s * (||x'_i - x_i|| + ||x'_j - x_j||)^2`.
    ConvexSquareSum,
    /// `s * sum_l (x'_il - x_il)^2 (x'_jl - x_jl)^2`.
    Proportional,
    /// `s * sum_l exp(-(x'_il - x'_jl)^2)`.
    Congestion,
}

impl Externality {
    pub const ALL: [Externality; 3] =
        [Externality::ConvexSquareSum, Externality::Proportional, Externality::Congestion];

    pub fn name(self) -> &'static str {
        match self {
            Externality::ConvexSquareSum => "convex_square_sum",
            Externality::Proportional => "proportional",
            Externality::Congestion => "congestion",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Whether the pairwise term is twice differentiable everywhere.
    pub fn is_smooth(self) -> bool {
        !matches!(self, Externality::ConvexSquareSum)
    }
}

/// Externality family with strength `beta`, normalised by `1 / (k - 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExternalityModel {
    variant: Externality,
    beta: f64,
    active_count: usize,
}

impl ExternalityModel {
    /// Out-of-range `beta` is accepted; see [`ExternalityModel::in_range`].
    pub fn new(variant: Externality, beta: f64, active_count: usize) -> Result<Self> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
        }
        if active_count == 0 {
            return Err(Error::Config("active count must be at least 1".into()));
        }
        Ok(Self { variant, beta, active_count })
    }

    pub fn variant(&self) -> Externality {
        self.variant
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..*self }
    }

    /// Per-pair scale `beta / (k - 1)`, zero when there are no peers.
    pub fn scale(&self) -> f64 {
        if self.active_count < 2 {
            0.0
        } else {
            self.beta / (self.active_count - 1) as f64
        }
    }

    /// Whether `beta` lies under the sufficient threshold for strict convexity
    /// of the cumulative impact: `beta < alpha` for proportional,
    /// `beta < alpha / sqrt(2)` for congestion. The square-sum family is
    /// convex for every `beta`.
    pub fn in_range(&self, alpha: f64) -> bool {
        match self.variant {
            Externality::ConvexSquareSum => true,
            Externality::Proportional => self.beta < alpha,
            Externality::Congestion => self.beta < alpha / std::f64::consts::SQRT_2,
        }
    }

    /// Twice differentiable at every report profile.
    pub fn is_smooth(&self) -> bool {
        self.beta == 0.0 || self.active_count < 2 || self.variant.is_smooth()
    }

    /// Per-pair externality including the `beta / (k - 1)` factor.
    pub fn pairwise(&self, x_i: &[f64], x_i_rep: &[f64], x_j: &[f64], x_j_rep: &[f64]) -> Result<f64> {
        let d = x_i.len();
        for v in [x_i_rep, x_j, x_j_rep] {
            super::check_dim(d, v.len())?;
        }
        if self.active_count < 2 {
            if self.beta > 0.0 {
                return Err(Error::Config(
                    "pairwise externality needs at least two active agents".into(),
                ));
            }
            return Ok(0.0);
        }
        Ok(self.pair_value(x_i, x_i_rep, x_j, x_j_rep))
    }

    pub(crate) fn pair_value(&self, x_i: &[f64], r_i: &[f64], x_j: &[f64], r_j: &[f64]) -> f64 {
        let s = self.scale();
        if s == 0.0 {
            return 0.0;
        }
        match self.variant {
            Externality::ConvexSquareSum => {
                let a = (super::sq_dist(r_i, x_i).sqrt() + super::sq_dist(r_j, x_j).sqrt()).powi(2);
                s * a
            }
            Externality::Proportional => {
                s * (0..x_i.len())
                    .map(|l| {
                        let ui = r_i[l] - x_i[l];
                        let uj = r_j[l] - x_j[l];
                        (ui * ui) * (uj * uj)
                    })
                    .sum::<f64>()
            }
            Externality::Congestion => {
                s * (0..x_i.len())
                    .map(|l| {
                        let v = r_i[l] - r_j[l];
                        (-v * v).exp()
                    })
                    .sum::<f64>()
            }
        }
    }

    /// Adds `coef * d t / d r_i` into `out`. For the square-sum family the
    /// norm term contributes zero where agent `i` does not manipulate.
    pub(crate) fn add_report_grad(
        &self,
        x_i: &[f64],
        r_i: &[f64],
        x_j: &[f64],
        r_j: &[f64],
        coef: f64,
        out: &mut [f64],
    ) {
        let s = self.scale() * coef;
        if s == 0.0 {
            return;
        }
        let d = x_i.len();
        match self.variant {
            Externality::ConvexSquareSum => {
                let ai = super::sq_dist(r_i, x_i).sqrt();
                if ai == 0.0 {
                    return;
                }
                let aj = super::sq_dist(r_j, x_j).sqrt();
                let f = 2.0 * s * (ai + aj) / ai;
                for l in 0..d {
                    out[l] += f * (r_i[l] - x_i[l]);
                }
            }
            Externality::Proportional => {
                for l in 0..d {
                    let ui = r_i[l] - x_i[l];
                    let uj = r_j[l] - x_j[l];
                    out[l] += 2.0 * s * ui * uj * uj;
                }
            }
            Externality::Congestion => {
                for l in 0..d {
                    let v = r_i[l] - r_j[l];
                    out[l] += -2.0 * s * v * (-v * v).exp();
                }
            }
        }
    }

    /// Adds `d t / d x_j` (the peer's true features) into `out`.
    pub(crate) fn add_peer_feature_grad(
        &self,
        x_i: &[f64],
        r_i: &[f64],
        x_j: &[f64],
        r_j: &[f64],
        out: &mut [f64],
    ) {
        let s = self.scale();
        if s == 0.0 {
            return;
        }
        let d = x_i.len();
        match self.variant {
            Externality::ConvexSquareSum => {
                let aj = super::sq_dist(r_j, x_j).sqrt();
                if aj == 0.0 {
                    return;
                }
                let ai = super::sq_dist(r_i, x_i).sqrt();
                let f = -2.0 * s * (ai + aj) / aj;
                for l in 0..d {
                    out[l] += f * (r_j[l] - x_j[l]);
                }
            }
            Externality::Proportional => {
                for l in 0..d {
                    let ui = r_i[l] - x_i[l];
                    let uj = r_j[l] - x_j[l];
                    out[l] += -2.0 * s * ui * ui * uj;
                }
            }
            Externality::Congestion => {}
        }
    }

    /// Second derivatives of the pair term: blocks `(ii, ij, jj)`, each `d x d`
    /// row-major. `None` where the square-sum norm is not twice differentiable.
    pub(crate) fn pair_hessian_blocks(
        &self,
        x_i: &[f64],
        r_i: &[f64],
        x_j: &[f64],
        r_j: &[f64],
    ) -> Option<[Vec<f64>; 3]> {
        let d = x_i.len();
        let s = self.scale();
        let mut hii = vec![0.0; d * d];
        let mut hij = vec![0.0; d * d];
        let mut hjj = vec![0.0; d * d];
        if s == 0.0 {
            return Some([hii, hij, hjj]);
        }
        match self.variant {
            Externality::Proportional => {
                for l in 0..d {
                    let ui = r_i[l] - x_i[l];
                    let uj = r_j[l] - x_j[l];
                    hii[l * d + l] = 2.0 * s * uj * uj;
                    hjj[l * d + l] = 2.0 * s * ui * ui;
                    hij[l * d + l] = 4.0 * s * ui * uj;
                }
            }
            Externality::Congestion => {
                for l in 0..d {
                    let v = r_i[l] - r_j[l];
                    let c = s * (4.0 * v * v - 2.0) * (-v * v).exp();
                    hii[l * d + l] = c;
                    hjj[l * d + l] = c;
                    hij[l * d + l] = -c;
                }
            }
            Externality::ConvexSquareSum => {
                let ai = super::sq_dist(r_i, x_i).sqrt();
                let aj = super::sq_dist(r_j, x_j).sqrt();
                if ai == 0.0 || aj == 0.0 {
                    return None;
                }
                let ni: Vec<f64> = (0..d).map(|l| (r_i[l] - x_i[l]) / ai).collect();
                let nj: Vec<f64> = (0..d).map(|l| (r_j[l] - x_j[l]) / aj).collect();
                let sum = ai + aj;
                for p in 0..d {
                    for q in 0..d {
                        let eye = if p == q { 1.0 } else { 0.0 };
                        hii[p * d + q] =
                            2.0 * s * (ni[p] * ni[q] + sum / ai * (eye - ni[p] * ni[q]));
                        hjj[p * d + q] =
                            2.0 * s * (nj[p] * nj[q] + sum / aj * (eye - nj[p] * nj[q]));
                        hij[p * d + q] = 2.0 * s * ni[p] * nj[q];
                    }
                }
            }
        }
        Some([hii, hij, hjj])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_truthful_agent_is_free() {
        let m = ExternalityModel::new(Externality::Proportional, 0.7, 3).unwrap();
        let t = m.pairwise(&[0.3, 0.4], &[0.3, 0.4], &[0.1, 0.2], &[0.9, 0.8]).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn congestion_identical_reports() {
        let m = ExternalityModel::new(Externality::Congestion, 1.0, 2).unwrap();
        let t = m.pairwise(&[0.1], &[0.6], &[0.9], &[0.6]).unwrap();
        assert_eq!(t, 1.0);
    }

    #[test]
    fn square_sum_direct_formula() {
        let m = ExternalityModel::new(Externality::ConvexSquareSum, 0.5, 2).unwrap();
        let t = m.pairwise(&[0.0], &[0.2], &[0.0], &[0.3]).unwrap();
        assert!((t - 0.125).abs() < 1e-15);
    }

    #[test]
    fn single_agent_with_beta_is_config_error() {
        let m = ExternalityModel::new(Externality::Congestion, 1.0, 1).unwrap();
        assert!(matches!(m.pairwise(&[0.1], &[0.2], &[0.3], &[0.4]), Err(Error::Config(_))));
        let m = m.with_beta(0.0);
        assert_eq!(m.pairwise(&[0.1], &[0.2], &[0.3], &[0.4]).unwrap(), 0.0);
    }

    #[test]
    fn threshold_flags() {
        let p = ExternalityModel::new(Externality::Proportional, 0.99, 2).unwrap();
        assert!(p.in_range(1.0));
        assert!(!p.with_beta(1.0).in_range(1.0));
        let c = ExternalityModel::new(Externality::Congestion, 0.7, 2).unwrap();
        assert!(c.in_range(1.0));
        assert!(!c.with_beta(0.71).in_range(1.0));
        assert!(ExternalityModel::new(Externality::Congestion, -1.0, 2).is_err());
    }

    #[test]
    fn names_round_trip() {
        for v in Externality::ALL {
            assert_eq!(Externality::parse(v.name()), Some(v));
        }
        assert_eq!(Externality::parse("global"), None);
    }
}
