#![allow(dead_code)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratext_core::game::{
    ClassifierParams, CostModel, Externality, ExternalityModel, FeatureMatrix, GainFunction,
    GameInstance, LabelVector,
};

/// Largest strength for which the potential is strictly concave everywhere.
/// The congestion limit is `alpha / 2`: the per-pair Hessian at coincident
/// reports has eigenvalue `2 alpha - 4 beta`.
pub fn concave_beta_limit(variant: Externality, alpha: f64) -> f64 {
    match variant {
        Externality::Proportional => alpha,
        Externality::Congestion => alpha / 2.0,
        Externality::ConvexSquareSum => 4.0 * alpha,
    }
}

pub fn variant_strategy() -> impl Strategy<Value = Externality> {
    prop_oneof![
        Just(Externality::ConvexSquareSum),
        Just(Externality::Proportional),
        Just(Externality::Congestion),
    ]
}

pub fn smooth_variant_strategy() -> impl Strategy<Value = Externality> {
    prop_oneof![Just(Externality::Proportional), Just(Externality::Congestion)]
}

#[derive(Debug, Clone)]
pub struct Case {
    pub inst: GameInstance,
    pub omega: ClassifierParams,
    pub rng: ChaCha8Rng,
}

pub fn build(
    variant: Externality,
    k: usize,
    d: usize,
    alpha: f64,
    beta: f64,
    extra_rows: usize,
    seed: u64,
) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = k + extra_rows;
    let features: Vec<f64> = (0..rows * d).map(|_| rng.gen()).collect();
    let labels: Vec<i8> = (0..rows).map(|_| if rng.gen() { 1 } else { -1 }).collect();
    let inst = GameInstance::new(
        FeatureMatrix::from_row_major(rows, d, features).unwrap(),
        LabelVector::new(labels).unwrap(),
        k,
        CostModel::new(alpha).unwrap(),
        ExternalityModel::new(variant, beta, k).unwrap(),
        GainFunction::default(),
    )
    .unwrap();
    let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Case { inst, omega: ClassifierParams::unconstrained(w), rng }
}

/// Instance with strictly concave potential.
pub fn concave_case(
    variant: Externality,
    k: usize,
    d: usize,
    alpha: f64,
    beta_frac: f64,
    seed: u64,
) -> Case {
    let beta = beta_frac * concave_beta_limit(variant, alpha);
    build(variant, k, d, alpha, beta, 0, seed)
}

pub fn random_reports(case: &mut Case) -> FeatureMatrix {
    let (rows, d) = (case.inst.features().rows(), case.inst.dim());
    let data = (0..rows * d).map(|_| case.rng.gen()).collect();
    FeatureMatrix::from_row_major(rows, d, data).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
