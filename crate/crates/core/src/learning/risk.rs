use crate::diff::LossFunction;
use crate::equilibrium::{solve_ne, SolverConfig};
use crate::error::Result;
use crate::game::{dot, ClassifierParams, GameInstance};

use super::Dataset;

/// Mean loss of the active agents scored at their equilibrium reports.
pub fn per_sample_loss(
    inst: &GameInstance,
    omega: &ClassifierParams,
    loss: LossFunction,
    solver: &SolverConfig,
) -> Result<f64> {
    let eq = solve_ne(inst, omega, solver)?;
    let k = inst.active_count();
    let w = omega.omega();
    let total: f64 =
        (0..k).map(|i| loss.value(dot(eq.report(i), w), inst.labels().get(i))).sum();
    Ok(total / k as f64)
}

/// Mean of [`per_sample_loss`] over a dataset.
pub fn empirical_risk(
    data: &Dataset,
    omega: &ClassifierParams,
    loss: LossFunction,
    solver: &SolverConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for inst in &data.instances {
        total += per_sample_loss(inst, omega, loss, solver)?;
    }
    Ok(total / data.len() as f64)
}

/// Mean loss of the active agents scored on their true features.
pub fn truthful_loss(inst: &GameInstance, omega: &ClassifierParams, loss: LossFunction) -> f64 {
    let k = inst.active_count();
    let w = omega.omega();
    let x = inst.features();
    (0..k).map(|i| loss.value(dot(x.row(i), w), inst.labels().get(i))).sum::<f64>() / k as f64
}

/// Gradient of [`truthful_loss`] in the weights.
pub fn truthful_loss_gradient(
    inst: &GameInstance,
    omega: &ClassifierParams,
    loss: LossFunction,
) -> Vec<f64> {
    let (k, d) = (inst.active_count(), inst.dim());
    let w = omega.omega();
    let mut g = vec![0.0; d];
    for i in 0..k {
        let xi = inst.features().row(i);
        let dl = loss.derivative(dot(xi, w), inst.labels().get(i));
        g.iter_mut().zip(xi).for_each(|(g, x)| *g += dl * x);
    }
    g.iter_mut().for_each(|g| *g /= k as f64);
    g
}
