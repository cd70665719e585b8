mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratext_core::diff::LossFunction;
use stratext_core::equilibrium::{solve_ne, SolverConfig};
use stratext_core::game::{ClassifierParams, CostModel, Externality, FeatureMatrix, GainFunction};
use stratext_core::learning::{
    empirical_risk, lipschitz_constants, per_sample_loss, train, Dataset, GameTemplate, Mode,
    PopulationModel, TrainConfig,
};

fn population() -> PopulationModel {
    PopulationModel::new(vec![0.7, 0.3], vec![0.3, 0.7], 0.15, 0.5, vec![0.2, 0.3, 0.5]).unwrap()
}

fn template(variant: Externality, beta: f64) -> GameTemplate {
    GameTemplate {
        cost: CostModel::new(1.0).unwrap(),
        externality: variant,
        beta,
        gain: GainFunction::default(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(30))]

    #[test]
    fn loss_is_invariant_under_agent_relabelling(
        variant in variant_strategy(),
        k in 2usize..6,
        beta_frac in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let case = concave_case(variant, k, 2, 1.0, beta_frac, seed);
        let mut perm: Vec<usize> = (0..k).collect();
        perm.rotate_left(1);
        let cfg = SolverConfig::default().with_tolerance(1e-12);
        let a = per_sample_loss(&case.inst, &case.omega, LossFunction::Logistic, &cfg).unwrap();
        let b = per_sample_loss(&case.inst.permuted(&perm).unwrap(), &case.omega, LossFunction::Logistic, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn equilibrium_moves_no_faster_than_eta(
        beta_frac in 0.0f64..0.95,
        seed in any::<u64>(),
    ) {
        let mut case = concave_case(Externality::Proportional, 4, 2, 1.0, beta_frac, seed);
        let samples: Vec<FeatureMatrix> = (0..20).map(|_| random_reports(&mut case)).collect();
        let lc = lipschitz_constants(&case.inst, &[case.omega.clone()], &samples).unwrap();
        let cfg = SolverConfig::default().with_tolerance(1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let w1: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let w2: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let dw = ((w1[0] - w2[0]).powi(2) + (w1[1] - w2[1]).powi(2)).sqrt();
            let e1 = solve_ne(&case.inst, &ClassifierParams::unconstrained(w1), &cfg).unwrap();
            let e2 = solve_ne(&case.inst, &ClassifierParams::unconstrained(w2), &cfg).unwrap();
            prop_assert!(e1.reports.distance(&e2.reports, 4) <= lc.eta * dw);
        }
    }
}

#[test]
fn risk_is_order_independent() {
    let data = Dataset::generate(&population(), &template(Externality::Proportional, 0.5), 25, 2).unwrap();
    let w = ClassifierParams::new(vec![1.0, -1.0], 2.0).unwrap();
    let cfg = SolverConfig::default();
    let risk = empirical_risk(&data, &w, LossFunction::Logistic, &cfg).unwrap();
    let mut shuffled = data.clone();
    shuffled.instances.reverse();
    let again = empirical_risk(&shuffled, &w, LossFunction::Logistic, &cfg).unwrap();
    assert!((risk - again).abs() <= 1e-12);
    let single = Dataset { instances: data.instances[..1].to_vec(), seed: 0 };
    assert_eq!(
        empirical_risk(&single, &w, LossFunction::Logistic, &cfg).unwrap(),
        per_sample_loss(&data.instances[0], &w, LossFunction::Logistic, &cfg).unwrap()
    );
}

#[test]
fn training_keeps_weights_in_budget() {
    let tpl = template(Externality::ConvexSquareSum, 1.0);
    let tr = Dataset::generate(&population(), &tpl, 20, 3).unwrap();
    let va = Dataset::generate(&population(), &tpl, 10, 4).unwrap();
    for budget in [0.3, 1.0] {
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 5.0,
            norm_budget: budget,
            loss: LossFunction::Logistic,
            solver: SolverConfig::default(),
            mode: Mode::Strategic,
            seed: 1,
        };
        let t = train(&tr, &va, &cfg).unwrap();
        let norm = t.omega.omega().iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm <= budget + 1e-12);
    }
}
