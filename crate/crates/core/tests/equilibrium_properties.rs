mod common;

use common::*;
use proptest::prelude::*;
use stratext_core::equilibrium::{
    br_dynamics, brute_force_ne, kkt_residual, recover_duals, solve_ne, verify_pne, SolverConfig,
};
use stratext_core::game::Externality;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn multistarts_agree(
        variant in variant_strategy(),
        k in 1usize..6,
        d in 1usize..4,
        alpha in 0.5f64..2.0,
        beta_frac in 0.0f64..0.95,
        seed in any::<u64>(),
    ) {
        let case = concave_case(variant, k, d, alpha, beta_frac, seed);
        let cfg = SolverConfig { seed, ..SolverConfig::default() }.with_multistart(10);
        let eq = solve_ne(&case.inst, &case.omega, &cfg).unwrap();
        prop_assert!(eq.unique);
        let check = verify_pne(&case.inst, &case.omega, &eq.reports, 1e-6, &SolverConfig::default()).unwrap();
        prop_assert!(check.is_pne, "{check:?}");
    }

    #[test]
    fn kkt_conditions_hold_at_solution(
        variant in smooth_variant_strategy(),
        k in 1usize..6,
        d in 1usize..4,
        beta_frac in 0.0f64..0.95,
        seed in any::<u64>(),
    ) {
        let case = concave_case(variant, k, d, 1.0, beta_frac, seed);
        let cfg = SolverConfig::default();
        let eq = solve_ne(&case.inst, &case.omega, &cfg).unwrap();
        let x = &eq.reports;
        let grad = case.inst.potential_gradient(x, &case.omega).unwrap();
        let (up, lo) = recover_duals(&case.inst, &case.omega, x).unwrap();
        prop_assert_eq!(&up, &eq.dual_upper);
        prop_assert_eq!(&lo, &eq.dual_lower);
        for i in 0..k {
            for l in 0..d {
                let v = x.get(i, l);
                prop_assert!((0.0..=1.0).contains(&v));
                prop_assert!(up[(i, l)] >= 0.0 && lo[(i, l)] >= 0.0);
                prop_assert!(up[(i, l)] * (1.0 - v) <= cfg.kkt_tolerance);
                prop_assert!(lo[(i, l)] * v <= cfg.kkt_tolerance);
                prop_assert!((grad[(i, l)] - up[(i, l)] + lo[(i, l)]).abs() <= cfg.kkt_tolerance);
            }
        }
        prop_assert!(kkt_residual(&case.inst, &case.omega, x).unwrap() <= cfg.kkt_tolerance);
    }

    #[test]
    fn best_response_dynamics_climb_to_the_equilibrium(
        variant in variant_strategy(),
        k in 1usize..5,
        d in 1usize..4,
        beta_frac in 0.0f64..0.9,
        seed in any::<u64>(),
    ) {
        let mut case = concave_case(variant, k, d, 1.0, beta_frac, seed);
        let start = random_reports(&mut case);
        let cfg = SolverConfig::default();
        let br = br_dynamics(&case.inst, &case.omega, &start, &cfg).unwrap();
        for w in br.potential_trace.windows(2) {
            prop_assert!(w[1] > w[0] - 1e-12, "trace decreased: {} -> {}", w[0], w[1]);
        }
        let eq = solve_ne(&case.inst, &case.omega, &cfg).unwrap();
        prop_assert!(br.reports.distance(&eq.reports, k) <= 1e-4);
        let check = verify_pne(&case.inst, &case.omega, &br.reports, 1e-5, &cfg).unwrap();
        prop_assert!(check.is_pne);
    }

    #[test]
    fn solver_matches_grid_search(
        variant in variant_strategy(),
        beta_frac in 0.0f64..0.95,
        seed in any::<u64>(),
    ) {
        let case = concave_case(variant, 2, 1, 1.0, beta_frac, seed);
        let eq = solve_ne(&case.inst, &case.omega, &SolverConfig::default()).unwrap();
        let grid = brute_force_ne(&case.inst, &case.omega, 1e-3).unwrap();
        for i in 0..2 {
            prop_assert!((eq.reports.get(i, 0) - grid.get(i, 0)).abs() <= 1e-3 + 1e-12);
        }
    }
}

#[test]
fn zero_classifier_keeps_everyone_truthful() {
    for variant in [Externality::Proportional, Externality::ConvexSquareSum] {
        let case = build(variant, 4, 3, 1.0, 2.0, 2, 3);
        let zero = stratext_core::game::ClassifierParams::zeros(3, 1.0).unwrap();
        let eq = solve_ne(&case.inst, &zero, &SolverConfig::default()).unwrap();
        assert_eq!(eq.reports, *case.inst.features());
    }
}
