use nalgebra::DMatrix;

use super::{dot, sq_dist, ClassifierParams, FeatureMatrix, GameInstance};
use crate::error::{Error, Result};

impl GameInstance {
    /// Total externality suffered by agent `i` from the other active agents.
    pub fn total_externality(&self, i: usize, reports: &FeatureMatrix) -> Result<f64> {
        self.check_agent(i)?;
        self.check_reports(reports)?;
        Ok(self.total_externality_at(i, reports.as_slice(), self.features.as_slice()))
    }

    /// Utility of agent `i`: score times gain, minus cost and total externality.
    pub fn agent_utility(
        &self,
        i: usize,
        reports: &FeatureMatrix,
        omega: &ClassifierParams,
    ) -> Result<f64> {
        self.check_agent(i)?;
        self.check_reports(reports)?;
        self.check_omega(omega)?;
        Ok(self.utility_at(i, reports.as_slice(), omega.omega(), self.features.as_slice()))
    }

    /// Potential over the active agents; rows at or past `k` do not contribute.
    pub fn potential(&self, reports: &FeatureMatrix, omega: &ClassifierParams) -> Result<f64> {
        self.check_reports(reports)?;
        self.check_omega(omega)?;
        Ok(self.potential_at(reports.as_slice(), omega.omega()))
    }

    /// `d potential / d report`, a `k x d` matrix.
    pub fn potential_gradient(
        &self,
        reports: &FeatureMatrix,
        omega: &ClassifierParams,
    ) -> Result<DMatrix<f64>> {
        self.check_reports(reports)?;
        self.check_omega(omega)?;
        let mut g = vec![0.0; self.n_vars()];
        self.gradient_at(reports.as_slice(), omega.omega(), &mut g);
        Ok(DMatrix::from_row_slice(self.active_count, self.dim(), &g))
    }

    /// Hessian of the potential in the flattened reports of the active agents.
    ///
    /// The square-sum externality is accepted only where every active agent
    /// manipulates (its norm term is not twice differentiable at zero).
    pub fn potential_hessian(
        &self,
        reports: &FeatureMatrix,
        omega: &ClassifierParams,
    ) -> Result<DMatrix<f64>> {
        self.check_reports(reports)?;
        self.check_omega(omega)?;
        self.hessian_at(reports.as_slice()).ok_or_else(|| {
            Error::Unsupported(
                "square-sum externality is not twice differentiable where an agent reports truthfully"
                    .into(),
            )
        })
    }

    /// Mixed second derivative `d^2 potential / d report d omega`, `(k d) x d`.
    /// For a linear score this is the stack of `gain_i * I`.
    pub fn cross_hessian(&self) -> DMatrix<f64> {
        let (k, d) = (self.active_count, self.dim());
        let mut c = DMatrix::zeros(k * d, d);
        for i in 0..k {
            let g = self.gain.value(self.features.row(i));
            for l in 0..d {
                c[(i * d + l, l)] = g;
            }
        }
        c
    }

    /// Gradient of agent `i`'s total externality with respect to the true
    /// features of its peers, `(k - 1) * d` entries ordered by peer index.
    pub fn externality_peer_gradient(&self, i: usize, reports: &FeatureMatrix) -> Result<Vec<f64>> {
        self.check_agent(i)?;
        self.check_reports(reports)?;
        Ok(self.peer_gradient_at(i, reports.as_slice(), self.features.as_slice()))
    }

    // Flat evaluators used by the solvers. `reports` and `truth` are row-major
    // with at least `k` rows.

    pub(crate) fn total_externality_at(&self, i: usize, reports: &[f64], truth: &[f64]) -> f64 {
        let d = self.dim();
        let ext = &self.externality;
        let (xi, ri) = (&truth[i * d..(i + 1) * d], &reports[i * d..(i + 1) * d]);
        (0..self.active_count)
            .filter(|&j| j != i)
            .map(|j| ext.pair_value(xi, ri, &truth[j * d..(j + 1) * d], &reports[j * d..(j + 1) * d]))
            .sum()
    }

    /// Utility of agent `i` where `truth` supplies the true features of every
    /// agent (row `i` is the agent's own, other rows may be estimates).
    pub(crate) fn utility_at(&self, i: usize, reports: &[f64], omega: &[f64], truth: &[f64]) -> f64 {
        let d = self.dim();
        let own = self.features.row(i);
        let ri = &reports[i * d..(i + 1) * d];
        dot(omega, ri) * self.gain.value(own) - self.cost.alpha() * sq_dist(own, ri)
            - self.total_externality_at(i, reports, truth)
    }

    pub(crate) fn potential_at(&self, reports: &[f64], omega: &[f64]) -> f64 {
        let (k, d) = (self.active_count, self.dim());
        let x = self.features.as_slice();
        let alpha = self.cost.alpha();
        let mut phi = 0.0;
        for i in 0..k {
            let xi = &x[i * d..(i + 1) * d];
            let ri = &reports[i * d..(i + 1) * d];
            phi += dot(omega, ri) * self.gain.value(xi) - alpha * sq_dist(xi, ri);
        }
        if self.externality.scale() > 0.0 {
            for i in 0..k {
                for j in i + 1..k {
                    phi -= self.externality.pair_value(
                        &x[i * d..(i + 1) * d],
                        &reports[i * d..(i + 1) * d],
                        &x[j * d..(j + 1) * d],
                        &reports[j * d..(j + 1) * d],
                    );
                }
            }
        }
        phi
    }

    /// Writes the `k * d` gradient of the potential into `out`.
    pub(crate) fn gradient_at(&self, reports: &[f64], omega: &[f64], out: &mut [f64]) {
        let (k, d) = (self.active_count, self.dim());
        let x = self.features.as_slice();
        let alpha = self.cost.alpha();
        for i in 0..k {
            let g = self.gain.value(&x[i * d..(i + 1) * d]);
            for l in 0..d {
                let p = i * d + l;
                out[p] = omega[l] * g - 2.0 * alpha * (reports[p] - x[p]);
            }
        }
        if self.externality.scale() > 0.0 {
            for i in 0..k {
                for j in 0..k {
                    if i == j {
                        continue;
                    }
                    self.externality.add_report_grad(
                        &x[i * d..(i + 1) * d],
                        &reports[i * d..(i + 1) * d],
                        &x[j * d..(j + 1) * d],
                        &reports[j * d..(j + 1) * d],
                        -1.0,
                        &mut out[i * d..(i + 1) * d],
                    );
                }
            }
        }
    }

    pub(crate) fn hessian_at(&self, reports: &[f64]) -> Option<DMatrix<f64>> {
        let (k, d) = (self.active_count, self.dim());
        let n = k * d;
        let x = self.features.as_slice();
        let mut h = DMatrix::from_diagonal_element(n, n, -2.0 * self.cost.alpha());
        if self.externality.scale() == 0.0 {
            return Some(h);
        }
        for i in 0..k {
            for j in i + 1..k {
                let [hii, hij, hjj] = self.externality.pair_hessian_blocks(
                    &x[i * d..(i + 1) * d],
                    &reports[i * d..(i + 1) * d],
                    &x[j * d..(j + 1) * d],
                    &reports[j * d..(j + 1) * d],
                )?;
                for p in 0..d {
                    for q in 0..d {
                        h[(i * d + p, i * d + q)] -= hii[p * d + q];
                        h[(j * d + p, j * d + q)] -= hjj[p * d + q];
                        h[(i * d + p, j * d + q)] -= hij[p * d + q];
                        h[(j * d + q, i * d + p)] -= hij[p * d + q];
                    }
                }
            }
        }
        Some(h)
    }

    pub(crate) fn peer_gradient_at(&self, i: usize, reports: &[f64], truth: &[f64]) -> Vec<f64> {
        let (k, d) = (self.active_count, self.dim());
        let mut out = Vec::with_capacity(k.saturating_sub(1) * d);
        let (xi, ri) = (&truth[i * d..(i + 1) * d], &reports[i * d..(i + 1) * d]);
        for j in (0..k).filter(|&j| j != i) {
            let mut g = vec![0.0; d];
            self.externality.add_peer_feature_grad(
                xi,
                ri,
                &truth[j * d..(j + 1) * d],
                &reports[j * d..(j + 1) * d],
                &mut g,
            );
            out.extend(g);
        }
        out
    }

    /// For the square-sum externality, the radius of the subdifferential ball
    /// of agent `i`'s norm term at zero manipulation, `2 s sum_j ||u_j||`.
    pub(crate) fn zero_manipulation_radius(&self, i: usize, reports: &[f64]) -> f64 {
        let d = self.dim();
        let x = self.features.as_slice();
        let peers: f64 = (0..self.active_count)
            .filter(|&j| j != i)
            .map(|j| sq_dist(&reports[j * d..(j + 1) * d], &x[j * d..(j + 1) * d]).sqrt())
            .sum();
        2.0 * self.externality.scale() * peers
    }

    /// Reports with every row set to the true features.
    pub fn truthful_reports(&self) -> FeatureMatrix {
        self.features.clone()
    }

    pub(crate) fn reports_from_flat(&self, active: &[f64]) -> Result<FeatureMatrix> {
        let mut data = self.features.as_slice().to_vec();
        data[..active.len()].copy_from_slice(active);
        FeatureMatrix::from_row_major(self.features.rows(), self.dim(), data)
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    fn instance(variant: Externality, beta: f64, rows: &[Vec<f64>]) -> GameInstance {
        let k = rows.len();
        GameInstance::new(
            FeatureMatrix::from_rows(rows).unwrap(),
            LabelVector::new(vec![1; k]).unwrap(),
            k,
            CostModel::new(1.0).unwrap(),
            ExternalityModel::new(variant, beta, k).unwrap(),
            GainFunction::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_classifier_truthful_is_zero() {
        let inst = instance(Externality::Congestion, 0.3, &[vec![0.2, 0.4], vec![0.5, 0.5]]);
        let w = ClassifierParams::zeros(2, 1.0).unwrap();
        let x = inst.truthful_reports();
        // congestion charges even truthful agents, proportional does not
        assert!(inst.potential(&x, &w).unwrap() < 0.0);
        let inst = instance(Externality::Proportional, 0.3, &[vec![0.2, 0.4], vec![0.5, 0.5]]);
        assert_eq!(inst.potential(&x, &w).unwrap(), 0.0);
        assert_eq!(inst.agent_utility(0, &x, &w).unwrap(), 0.0);
    }

    #[test]
    fn single_agent_utility() {
        let inst = instance(Externality::Proportional, 1.0, &[vec![0.0]]);
        let w = ClassifierParams::new(vec![1.0], 1.0).unwrap();
        let r = FeatureMatrix::from_rows(&[vec![0.5]]).unwrap();
        assert!((inst.agent_utility(0, &r, &w).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(inst.total_externality(0, &r).unwrap(), 0.0);
        assert!(matches!(inst.agent_utility(1, &r, &w), Err(Error::Index { .. })));
    }

    #[test]
    fn separable_gradient_and_hessian() {
        let inst = instance(Externality::Proportional, 0.0, &[vec![0.2, 0.4], vec![0.5, 0.1]]);
        let w = ClassifierParams::new(vec![0.3, -0.2], 1.0).unwrap();
        let r = FeatureMatrix::from_rows(&[vec![0.6, 0.1], vec![0.5, 0.9]]).unwrap();
        let g = inst.potential_gradient(&r, &w).unwrap();
        for i in 0..2 {
            for l in 0..2 {
                let want = w.omega()[l] - 2.0 * (r.get(i, l) - inst.features().get(i, l));
                assert!((g[(i, l)] - want).abs() < 1e-15);
            }
        }
        let h = inst.potential_hessian(&r, &w).unwrap();
        assert_eq!(h, DMatrix::from_diagonal_element(4, 4, -2.0));
    }

    #[test]
    fn proportional_pair_block_matches_closed_form() {
        // k = 2, d = 1: negated cumulative-impact Hessian
        let beta = 0.6;
        let inst = instance(Externality::Proportional, beta, &[vec![0.1], vec![0.3]]);
        let w = ClassifierParams::new(vec![0.5], 1.0).unwrap();
        let r = FeatureMatrix::from_rows(&[vec![0.8], vec![0.2]]).unwrap();
        let (ui, uj) = (0.7, -0.1);
        let h = inst.potential_hessian(&r, &w).unwrap();
        let want = [
            [2.0 + 2.0 * beta * uj * uj, 4.0 * beta * ui * uj],
            [4.0 * beta * ui * uj, 2.0 + 2.0 * beta * ui * ui],
        ];
        for p in 0..2 {
            for q in 0..2 {
                assert!((h[(p, q)] + want[p][q]).abs() < 1e-14, "{p}{q}");
            }
        }
    }

    #[test]
    fn cross_hessian_is_stacked_gain_identity() {
        let mut inst = instance(Externality::Proportional, 0.2, &[vec![0.2, 0.4], vec![0.5, 0.1]]);
        let c = inst.cross_hessian();
        let mut want = DMatrix::zeros(4, 2);
        want[(0, 0)] = 1.0;
        want[(1, 1)] = 1.0;
        want[(2, 0)] = 1.0;
        want[(3, 1)] = 1.0;
        assert_eq!(c, want);
        inst.gain = GainFunction::new_constant(2.5).unwrap();
        assert_eq!(inst.cross_hessian(), want * 2.5);
    }

    #[test]
    fn square_sum_hessian_rejected_at_truthful_agent() {
        let inst = instance(Externality::ConvexSquareSum, 0.5, &[vec![0.2], vec![0.5]]);
        let w = ClassifierParams::new(vec![0.5], 1.0).unwrap();
        let r = FeatureMatrix::from_rows(&[vec![0.2], vec![0.7]]).unwrap();
        assert!(matches!(inst.potential_hessian(&r, &w), Err(Error::Unsupported(_))));
        let r = FeatureMatrix::from_rows(&[vec![0.3], vec![0.7]]).unwrap();
        assert!(inst.potential_hessian(&r, &w).is_ok());
    }

    #[test]
    fn inert_rows_do_not_contribute() {
        let rows = [vec![0.2], vec![0.4], vec![0.9]];
        let inst = GameInstance::new(
            FeatureMatrix::from_rows(&rows).unwrap(),
            LabelVector::new(vec![1, -1, 1]).unwrap(),
            2,
            CostModel::new(1.0).unwrap(),
            ExternalityModel::new(Externality::Congestion, 0.4, 2).unwrap(),
            GainFunction::default(),
        )
        .unwrap();
        let w = ClassifierParams::new(vec![0.7], 1.0).unwrap();
        let a = FeatureMatrix::from_rows(&[vec![0.3], vec![0.6], vec![0.0]]).unwrap();
        let b = FeatureMatrix::from_rows(&[vec![0.3], vec![0.6], vec![1.0]]).unwrap();
        assert_eq!(inst.potential(&a, &w).unwrap(), inst.potential(&b, &w).unwrap());
        assert_eq!(inst.potential_gradient(&a, &w).unwrap().nrows(), 2);
    }
}
