//! Game data model: agents, reports, cost, externality and the potential.
//!
//! Matrices of features and reports are stored row-major, one row per agent,
//! so that an agent's vector is a contiguous slice. Flattened indices used by
//! gradients, Hessians and Jacobians are `agent * d + coordinate`.

mod convexity;
mod externality;
mod potential;

pub use convexity::{
    check_convexity_threshold, pair_hessian, pair_hessian_determinant, ConvexityReport,
};
pub use externality::{Externality, ExternalityModel};

use crate::error::{Error, Result};

/// Agent features (true or reported), `k_max` rows by `d` columns in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config("feature matrix needs at least one row and column".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension { expected: rows * cols, got: data.len() });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("feature value {v} outside [0, 1]")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Usage("ragged feature rows".into()));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    /// Clamps every entry into the box before validating.
    pub fn clamped(rows: usize, cols: usize, mut data: Vec<f64>) -> Result<Self> {
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::from_row_major(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, l: usize) -> f64 {
        self.data[i * self.cols + l]
    }

    /// Frobenius distance over the first `k` rows.
    pub fn distance(&self, other: &FeatureMatrix, k: usize) -> f64 {
        let n = k * self.cols;
        self.data[..n]
            .iter()
            .zip(&other.data[..n])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// Binary labels in `{-1, +1}`, one per row of the feature matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<i8>);

impl LabelVector {
    pub fn new(labels: Vec<i8>) -> Result<Self> {
        if let Some(y) = labels.iter().find(|y| **y != 1 && **y != -1) {
            return Err(Error::Config(format!("label {y} is not -1 or +1")));
        }
        Ok(Self(labels))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        f64::from(self.0[i])
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }
}

/// Linear classifier weights with an L2 norm budget.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    omega: Vec<f64>,
    norm_budget: f64,
}

impl ClassifierParams {
    pub fn new(omega: Vec<f64>, norm_budget: f64) -> Result<Self> {
        if !(norm_budget > 0.0) || !norm_budget.is_finite() {
            return Err(Error::Config(format!("norm budget must be positive, got {norm_budget}")));
        }
        if omega.is_empty() {
            return Err(Error::Config("weight vector is empty".into()));
        }
        let norm = l2(&omega);
        if norm > norm_budget * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "weight norm {norm} exceeds budget {norm_budget}"
            )));
        }
        Ok(Self { omega, norm_budget })
    }

    /// Weights with an effectively unbounded budget, for analysis code.
    pub fn unconstrained(omega: Vec<f64>) -> Self {
        let r = l2(&omega).max(1.0) * 2.0;
        Self { omega, norm_budget: r }
    }

    /// Projects `omega` onto the ball of radius `norm_budget`.
    pub fn projected(mut omega: Vec<f64>, norm_budget: f64) -> Result<Self> {
        let norm = l2(&omega);
        if norm > norm_budget {
            let s = norm_budget / norm;
            omega.iter_mut().for_each(|w| *w *= s);
        }
        Self::new(omega, norm_budget)
    }

    pub fn zeros(d: usize, norm_budget: f64) -> Result<Self> {
        Self::new(vec![0.0; d], norm_budget)
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn norm_budget(&self) -> f64 {
        self.norm_budget
    }
}

/// Quadratic manipulation cost `alpha * ||x - x'||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModel {
    alpha: f64,
}

impl CostModel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn cost(&self, x_true: &[f64], x_report: &[f64]) -> Result<f64> {
        check_dim(x_true.len(), x_report.len())?;
        Ok(self.alpha * sq_dist(x_true, x_report))
    }
}

/// Gain an agent receives per unit of score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainFunction {
    Constant(f64),
}

impl Default for GainFunction {
    fn default() -> Self {
        GainFunction::Constant(1.0)
    }
}

impl GainFunction {
    pub fn new_constant(value: f64) -> Result<Self> {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::Config(format!("gain must be positive, got {value}")));
        }
        Ok(GainFunction::Constant(value))
    }

    pub fn value(&self, _x_true: &[f64]) -> f64 {
        match *self {
            GainFunction::Constant(g) => g,
        }
    }
}

/// One classification episode: `k` active agents out of `k_max` stored rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    features: FeatureMatrix,
    labels: LabelVector,
    active_count: usize,
    cost: CostModel,
    externality: ExternalityModel,
    gain: GainFunction,
}

impl GameInstance {
    pub fn new(
        features: FeatureMatrix,
        labels: LabelVector,
        active_count: usize,
        cost: CostModel,
        externality: ExternalityModel,
        gain: GainFunction,
    ) -> Result<Self> {
        if labels.len() != features.rows() {
            return Err(Error::Dimension { expected: features.rows(), got: labels.len() });
        }
        if active_count == 0 || active_count > features.rows() {
            return Err(Error::Config(format!(
                "active count {active_count} not in [1, {}]",
                features.rows()
            )));
        }
        if externality.active_count() != active_count {
            return Err(Error::Config(format!(
                "externality normalised for {} agents but {active_count} are active",
                externality.active_count()
            )));
        }
        Ok(Self { features, labels, active_count, cost, externality, gain })
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn labels(&self) -> &LabelVector {
        &self.labels
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn cost_model(&self) -> CostModel {
        self.cost
    }

    pub fn externality(&self) -> &ExternalityModel {
        &self.externality
    }

    pub fn gain(&self) -> GainFunction {
        self.gain
    }

    /// Number of report variables of the active agents (`k * d`).
    pub fn n_vars(&self) -> usize {
        self.active_count * self.dim()
    }

    /// Same instance with the externality strength set to zero.
    pub fn without_externality(&self) -> Self {
        let mut out = self.clone();
        out.externality = self.externality.with_beta(0.0);
        out
    }

    pub fn with_externality(&self, externality: ExternalityModel) -> Result<Self> {
        Self::new(
            self.features.clone(),
            self.labels.clone(),
            self.active_count,
            self.cost,
            externality,
            self.gain,
        )
    }

    pub fn with_cost(&self, cost: CostModel) -> Self {
        let mut out = self.clone();
        out.cost = cost;
        out
    }

    /// Reorders the active agents (rows `0..k`) by `perm`; inert rows stay put.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.active_count;
        let d = self.dim();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Usage("permutation must cover the active agents exactly once".into()));
        }
        let mut data = self.features.as_slice().to_vec();
        let mut labels = self.labels.as_slice().to_vec();
        for (dst, &src) in perm.iter().enumerate() {
            data[dst * d..(dst + 1) * d].copy_from_slice(self.features.row(src));
            labels[dst] = self.labels.as_slice()[src];
        }
        let mut out = self.clone();
        out.features = FeatureMatrix::from_row_major(self.features.rows(), d, data)?;
        out.labels = LabelVector::new(labels)?;
        Ok(out)
    }

    pub(crate) fn check_agent(&self, i: usize) -> Result<()> {
        if i >= self.active_count {
            return Err(Error::Index { index: i, active: self.active_count });
        }
        Ok(())
    }

    pub(crate) fn check_omega(&self, omega: &ClassifierParams) -> Result<()> {
        check_dim(self.dim(), omega.dim())
    }

    pub(crate) fn check_reports(&self, reports: &FeatureMatrix) -> Result<()> {
        if reports.rows() != self.features.rows() {
            return Err(Error::Dimension { expected: self.features.rows(), got: reports.rows() });
        }
        check_dim(self.dim(), reports.dim())
    }
}

/// Classifier score `<x, omega>`.
pub fn score(omega: &ClassifierParams, x_report: &[f64]) -> Result<f64> {
    check_dim(omega.dim(), x_report.len())?;
    Ok(dot(omega.omega(), x_report))
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_examples() {
        let w = ClassifierParams::new(vec![0.0, 0.0], 1.0).unwrap();
        assert_eq!(score(&w, &[0.3, 0.9]).unwrap(), 0.0);
        let w = ClassifierParams::new(vec![1.0, 1.0], 2.0).unwrap();
        assert_eq!(score(&w, &[0.5, 0.25]).unwrap(), 0.75);
        assert!(matches!(score(&w, &[0.5]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cost_examples() {
        let c = CostModel::new(2.0).unwrap();
        assert_eq!(c.cost(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 4.0);
        assert_eq!(c.cost(&[0.4, 0.7], &[0.4, 0.7]).unwrap(), 0.0);
        let c = CostModel::new(1.0).unwrap();
        assert_eq!(c.cost(&[0.5], &[0.25]).unwrap(), 0.0625);
        assert!(CostModel::new(0.0).is_err());
    }

    #[test]
    fn feature_matrix_rejects_out_of_box() {
        assert!(FeatureMatrix::from_rows(&[vec![0.2, 1.1]]).is_err());
        assert!(FeatureMatrix::from_rows(&[vec![0.2], vec![0.3, 0.1]]).is_err());
        assert!(FeatureMatrix::from_row_major(0, 2, vec![]).is_err());
        let m = FeatureMatrix::clamped(1, 2, vec![-0.5, 1.5]).unwrap();
        assert_eq!(m.row(0), &[0.0, 1.0]);
    }

    #[test]
    fn labels_and_params_validate() {
        assert!(LabelVector::new(vec![1, -1, 0]).is_err());
        assert!(ClassifierParams::new(vec![3.0, 4.0], 4.9).is_err());
        let p = ClassifierParams::projected(vec![3.0, 4.0], 1.0).unwrap();
        assert!((l2(p.omega()) - 1.0).abs() < 1e-15);
    }
}
