mod common;

use common::*;
use proptest::prelude::*;
use stratext_core::game::{ClassifierParams, ExternalityModel, Externality, FeatureMatrix};

fn perturbed(r: &FeatureMatrix, p: usize, h: f64) -> FeatureMatrix {
    let mut data = r.as_slice().to_vec();
    data[p] += h;
    FeatureMatrix::from_row_major(r.rows(), r.dim(), data).unwrap()
}

/// Reports at least `margin` inside the box, so central differences stay feasible.
fn interior(r: &FeatureMatrix, margin: f64) -> FeatureMatrix {
    let data = r.as_slice().iter().map(|v| margin + (1.0 - 2.0 * margin) * v).collect();
    FeatureMatrix::from_row_major(r.rows(), r.dim(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn pairwise_externality_is_symmetric(
        variant in variant_strategy(),
        beta in 0.0f64..3.0,
        k in 2usize..6,
        v in prop::collection::vec(0.0f64..=1.0, 12),
    ) {
        let m = ExternalityModel::new(variant, beta, k).unwrap();
        let (xi, ri, xj, rj) = (&v[0..3], &v[3..6], &v[6..9], &v[9..12]);
        prop_assert_eq!(m.pairwise(xi, ri, xj, rj).unwrap(), m.pairwise(xj, rj, xi, ri).unwrap());
    }

    #[test]
    fn potential_tracks_unilateral_deviations(
        variant in variant_strategy(),
        k in 1usize..6,
        d in 1usize..4,
        alpha in 0.1f64..4.0,
        beta in 0.0f64..4.0,
        seed in any::<u64>(),
    ) {
        let mut case = build(variant, k, d, alpha, beta, 1, seed);
        let base = random_reports(&mut case);
        let i = (seed % k as u64) as usize;
        let a = random_reports(&mut case);
        let b = random_reports(&mut case);
        let with_row = |src: &FeatureMatrix| {
            let mut data = base.as_slice().to_vec();
            data[i * d..(i + 1) * d].copy_from_slice(src.row(i));
            FeatureMatrix::from_row_major(base.rows(), d, data).unwrap()
        };
        let (ra, rb) = (with_row(&a), with_row(&b));
        let g = &case.inst;
        let du = g.agent_utility(i, &ra, &case.omega).unwrap() - g.agent_utility(i, &rb, &case.omega).unwrap();
        let dp = g.potential(&ra, &case.omega).unwrap() - g.potential(&rb, &case.omega).unwrap();
        prop_assert!((du - dp).abs() <= 1e-9, "du={du} dphi={dp}");
    }

    #[test]
    fn total_externality_counts_each_pair_twice(
        variant in variant_strategy(),
        k in 2usize..7,
        d in 1usize..4,
        beta in 0.0f64..3.0,
        seed in any::<u64>(),
    ) {
        let mut case = build(variant, k, d, 1.0, beta, 0, seed);
        let r = random_reports(&mut case);
        let g = &case.inst;
        let x = g.features();
        let total: f64 = (0..k).map(|i| g.total_externality(i, &r).unwrap()).sum();
        let mut pairs = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                pairs += g.externality().pairwise(x.row(i), r.row(i), x.row(j), r.row(j)).unwrap();
            }
        }
        prop_assert!((total - 2.0 * pairs).abs() <= 1e-10);
    }

    #[test]
    fn gradient_matches_differences(
        variant in variant_strategy(),
        k in 1usize..5,
        d in 1usize..4,
        beta in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let mut case = build(variant, k, d, 1.3, beta, 1, seed);
        let r = interior(&random_reports(&mut case), 0.01);
        let g = &case.inst;
        let grad = g.potential_gradient(&r, &case.omega).unwrap();
        let h = 1e-6;
        for p in 0..k * d {
            let fd = (g.potential(&perturbed(&r, p, h), &case.omega).unwrap()
                - g.potential(&perturbed(&r, p, -h), &case.omega).unwrap()) / (2.0 * h);
            let an = grad[(p / d, p % d)];
            prop_assert!(rel_err(fd, an) <= 1e-5, "coord {p}: fd {fd} analytic {an}");
        }
    }

    #[test]
    fn hessian_is_symmetric_and_matches_differences(
        variant in variant_strategy(),
        k in 1usize..5,
        d in 1usize..4,
        beta in 0.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let mut case = build(variant, k, d, 0.8, beta, 0, seed);
        let r = interior(&random_reports(&mut case), 0.01);
        let g = &case.inst;
        let hess = g.potential_hessian(&r, &case.omega).unwrap();
        let n = k * d;
        for a in 0..n {
            for b in 0..n {
                prop_assert!((hess[(a, b)] - hess[(b, a)]).abs() <= 1e-10);
            }
        }
        let h = 1e-6;
        for b in 0..n {
            let gp = g.potential_gradient(&perturbed(&r, b, h), &case.omega).unwrap();
            let gm = g.potential_gradient(&perturbed(&r, b, -h), &case.omega).unwrap();
            for a in 0..n {
                let fd = (gp[(a / d, a % d)] - gm[(a / d, a % d)]) / (2.0 * h);
                prop_assert!(rel_err(fd, hess[(a, b)]) <= 1e-4, "({a},{b}) fd {fd} analytic {}", hess[(a, b)]);
            }
        }
    }

    #[test]
    fn cross_hessian_matches_differences(
        variant in variant_strategy(),
        k in 1usize..5,
        d in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut case = build(variant, k, d, 1.0, 0.7, 0, seed);
        let r = random_reports(&mut case);
        let g = &case.inst;
        let c = g.cross_hessian();
        let h = 1e-6;
        for l in 0..d {
            let mut wp = case.omega.omega().to_vec();
            let mut wm = wp.clone();
            wp[l] += h;
            wm[l] -= h;
            let gp = g.potential_gradient(&r, &ClassifierParams::unconstrained(wp)).unwrap();
            let gm = g.potential_gradient(&r, &ClassifierParams::unconstrained(wm)).unwrap();
            for p in 0..k * d {
                let fd = (gp[(p / d, p % d)] - gm[(p / d, p % d)]) / (2.0 * h);
                prop_assert!((fd - c[(p, l)]).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn potential_is_strictly_concave_in_range(
        variant in variant_strategy(),
        k in 2usize..6,
        d in 1usize..4,
        alpha in 0.2f64..3.0,
        beta_frac in 0.0f64..0.999,
        seed in any::<u64>(),
    ) {
        let mut case = concave_case(variant, k, d, alpha, beta_frac, seed);
        let r = random_reports(&mut case);
        let h = case.inst.potential_hessian(&r, &case.omega).unwrap();
        let top = h.symmetric_eigenvalues().max();
        prop_assert!(top < 0.0, "largest eigenvalue {top}");
    }
}

#[test]
fn square_sum_hessian_rejected_at_truthful_report() {
    let case = build(Externality::ConvexSquareSum, 3, 2, 1.0, 1.0, 0, 7);
    let r = case.inst.truthful_reports();
    assert!(case.inst.potential_hessian(&r, &case.omega).is_err());
}
