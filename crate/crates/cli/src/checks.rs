//! Cross-module invariant suites: each draws random games and compares the
//! library against an independent oracle or a structural identity.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stratext_core::diff::{fd_jacobian, loss_gradient, ne_jacobian, LossFunction};
use stratext_core::equilibrium::{
    br_dynamics, brute_force_ne, solve_ne, solve_ne_from, verify_pne, SolverConfig,
};
use stratext_core::game::{
    check_convexity_threshold, pair_hessian_determinant, ClassifierParams, CostModel, Externality,
    ExternalityModel, FeatureMatrix, GainFunction, GameInstance, LabelVector,
};
use stratext_core::learning::{
    estimate_externality_lipschitz, imperfect_info_check, lipschitz_constants, per_sample_loss,
    sample_complexity, train, Mode,
};
use stratext_core::Result;

use crate::config::ExperimentConfig;
use crate::experiment::{datasets, Cell};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self { name, passed, detail }
    }

    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

/// Number of random trials per suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSizes {
    pub potential_triples: usize,
    pub concave_instances: usize,
    pub multistarts: usize,
    pub grid_instances: usize,
    pub convexity_samples: usize,
    pub jacobian_instances: usize,
    pub lipschitz_pairs: usize,
    pub imperfect_instances: usize,
    pub imperfect_deviations: usize,
    pub lambda_points: usize,
}

impl SuiteSizes {
    /// Trial counts of the acceptance criteria.
    pub const FULL: SuiteSizes = SuiteSizes {
        potential_triples: 1000,
        concave_instances: 100,
        multistarts: 10,
        grid_instances: 50,
        convexity_samples: 10_000,
        jacobian_instances: 50,
        lipschitz_pairs: 100,
        imperfect_instances: 50,
        imperfect_deviations: 1000,
        lambda_points: 10_000,
    };

    /// Reduced counts for interactive use.
    pub const QUICK: SuiteSizes = SuiteSizes {
        potential_triples: 300,
        concave_instances: 20,
        multistarts: 5,
        grid_instances: 5,
        convexity_samples: 2000,
        jacobian_instances: 10,
        lipschitz_pairs: 50,
        imperfect_instances: 10,
        imperfect_deviations: 300,
        lambda_points: 2000,
    };
}

/// Strength below which the potential is strictly concave for every report
/// profile: the congestion pair Hessian at coincident reports has eigenvalue
/// `2 alpha - 4 beta`, so its limit is `alpha / 2`. The square-sum family is
/// concave at any strength; its draws are capped at `4 alpha`.
pub fn concave_beta_limit(variant: Externality, alpha: f64) -> f64 {
    match variant {
        Externality::Proportional => alpha,
        Externality::Congestion => alpha / 2.0,
        Externality::ConvexSquareSum => 4.0 * alpha,
    }
}

/// Random game with `k` active agents, uniform features and labels, and
/// weights uniform in `[-1.5, 1.5]^d`.
pub fn random_game(
    rng: &mut ChaCha8Rng,
    variant: Externality,
    k: usize,
    d: usize,
    alpha: f64,
    beta: f64,
) -> Result<(GameInstance, ClassifierParams)> {
    let features: Vec<f64> = (0..k * d).map(|_| rng.gen()).collect();
    let labels: Vec<i8> = (0..k).map(|_| if rng.gen() { 1 } else { -1 }).collect();
    let inst = GameInstance::new(
        FeatureMatrix::from_row_major(k, d, features)?,
        LabelVector::new(labels)?,
        k,
        CostModel::new(alpha)?,
        ExternalityModel::new(variant, beta, k)?,
        GainFunction::default(),
    )?;
    let w = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
    Ok((inst, ClassifierParams::unconstrained(w)))
}

/// Random strictly concave game: `k <= 5`, `d <= 3`, beta below the
/// concavity limit.
pub fn random_concave_game(
    rng: &mut ChaCha8Rng,
    variants: &[Externality],
) -> Result<(GameInstance, ClassifierParams)> {
    let variant = variants[rng.gen_range(0..variants.len())];
    let (k, d) = (rng.gen_range(1..=5), rng.gen_range(1..=3));
    let alpha = rng.gen_range(0.5..2.0);
    let beta = rng.gen_range(0.0..0.95) * concave_beta_limit(variant, alpha);
    random_game(rng, variant, k, d, alpha, beta)
}

pub fn random_reports(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Result<FeatureMatrix> {
    FeatureMatrix::from_row_major(rows, d, (0..rows * d).map(|_| rng.gen()).collect())
}

fn tight() -> SolverConfig {
    SolverConfig::default().with_tolerance(1e-12)
}

/// `u_i(r2) - u_i(r1) = Phi(r2) - Phi(r1)` for unilateral deviations of agent `i`.
pub fn potential_identity(n: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for t in 0..n {
        let variant = Externality::ALL[t % 3];
        let (k, d) = (rng.gen_range(2..=5), rng.gen_range(1..=3));
        let (alpha, beta) = (rng.gen_range(0.5..2.0), rng.gen_range(0.0..2.0));
        let (inst, w) = random_game(&mut rng, variant, k, d, alpha, beta)?;
        let first = random_reports(&mut rng, k, d)?;
        let i = rng.gen_range(0..k);
        let mut data = first.as_slice().to_vec();
        data[i * d..(i + 1) * d].iter_mut().for_each(|v| *v = rng.gen());
        let second = FeatureMatrix::from_row_major(k, d, data)?;
        let du = inst.agent_utility(i, &second, &w)? - inst.agent_utility(i, &first, &w)?;
        let dphi = inst.potential(&second, &w)? - inst.potential(&first, &w)?;
        worst = worst.max((du - dphi).abs());
    }
    Ok((worst <= 1e-9, format!("{n} deviations, max |du - dphi| = {worst:.2e}")))
}

/// Multistart solves agree and the solution survives best-response checks.
pub fn uniqueness(games: &[(GameInstance, ClassifierParams)], starts: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tight();
    let (mut spread, mut gain): (f64, f64) = (0.0, f64::NEG_INFINITY);
    for (inst, w) in games {
        let (k, d) = (inst.active_count(), inst.dim());
        let base = solve_ne(inst, w, &cfg)?;
        for _ in 1..starts {
            let start = random_reports(&mut rng, k, d)?;
            let other = solve_ne_from(inst, w, &start, &cfg)?;
            spread = spread.max(base.reports.distance(&other.reports, k));
        }
        gain = gain.max(verify_pne(inst, w, &base.reports, 1e-6, &cfg)?.worst_gain);
    }
    Ok((
        spread <= 1e-5 && gain <= 1e-6,
        format!(
            "{} games x {starts} starts, max spread {spread:.2e}, max best-response gain {gain:.2e}",
            games.len()
        ),
    ))
}

/// Best-response dynamics from random starts: monotone potential and the
/// same endpoint as the solver.
pub fn best_response_dynamics(games: &[(GameInstance, ClassifierParams)], seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tight();
    let (mut drop, mut dist): (f64, f64) = (0.0, 0.0);
    for (inst, w) in games {
        let (k, d) = (inst.active_count(), inst.dim());
        let start = random_reports(&mut rng, k, d)?;
        let br = br_dynamics(inst, w, &start, &cfg)?;
        for pair in br.potential_trace.windows(2) {
            drop = drop.max(pair[0] - pair[1]);
        }
        let eq = solve_ne(inst, w, &cfg)?;
        dist = dist.max(br.reports.distance(&eq.reports, k));
    }
    Ok((
        drop <= 1e-12 && dist <= 1e-4,
        format!("{} games, largest potential drop {drop:.2e}, max distance to solver {dist:.2e}", games.len()),
    ))
}

/// Grid search for two one-dimensional agents and the closed form for one.
pub fn oracle_equivalence(n: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tight();
    let resolution = 1e-3;
    let mut grid_gap: f64 = 0.0;
    for t in 0..n {
        let variant = Externality::ALL[t % 3];
        let alpha = rng.gen_range(0.5..2.0);
        let beta = rng.gen_range(0.0..0.95) * concave_beta_limit(variant, alpha);
        let (inst, w) = random_game(&mut rng, variant, 2, 1, alpha, beta)?;
        let grid = brute_force_ne(&inst, &w, resolution)?;
        let eq = solve_ne(&inst, &w, &cfg)?;
        for i in 0..2 {
            grid_gap = grid_gap.max((grid.get(i, 0) - eq.reports.get(i, 0)).abs());
        }
    }
    let mut closed_gap: f64 = 0.0;
    for _ in 0..n {
        let alpha = rng.gen_range(0.2..3.0);
        let (inst, w) = random_game(&mut rng, Externality::Proportional, 1, 1, alpha, 0.5)?;
        let x = inst.features().get(0, 0);
        let expected = (x + w.omega()[0] / (2.0 * alpha)).clamp(0.0, 1.0);
        closed_gap = closed_gap.max((solve_ne(&inst, &w, &cfg)?.reports.get(0, 0) - expected).abs());
    }
    Ok((
        grid_gap <= resolution && closed_gap <= 1e-8,
        format!("max gap to grid {grid_gap:.2e} (cell {resolution}), to closed form {closed_gap:.2e}"),
    ))
}

/// Sampled and boundary per-pair Hessian determinants at the strength
/// thresholds.
pub fn convexity_thresholds(samples: usize, seed: u64) -> Result<(bool, String)> {
    let cost = CostModel::new(1.0)?;
    let prop = check_convexity_threshold(
        &ExternalityModel::new(Externality::Proportional, 0.9, 2)?,
        &cost,
        samples,
        seed,
    );
    let prop_edge = pair_hessian_determinant(Externality::Proportional, 1.0, 1.0, 1.0, 1.0);
    let cong_edge = pair_hessian_determinant(Externality::Congestion, 1.0, 1.0 / 2f64.sqrt(), 0.0, 0.0);
    let cong = check_convexity_threshold(
        &ExternalityModel::new(Externality::Congestion, 0.6, 2)?,
        &cost,
        samples,
        seed,
    );
    let passed = prop.min_determinant > 0.0
        && prop_edge.abs() <= 1e-12
        && cong_edge.abs() <= 1e-12
        && cong.min_determinant > 0.0;
    Ok((
        passed,
        format!(
            "proportional 0.9 min det {:.3e}, at 1 {prop_edge:.1e}; congestion 1/sqrt2 at 0 {cong_edge:.1e}, 0.6 min det {:.3e}",
            prop.min_determinant, cong.min_determinant
        ),
    ))
}

/// Whether every coordinate sits clearly inside the box or clearly pinned,
/// so a small weight perturbation cannot change the active set.
fn is_nondegenerate(eq: &stratext_core::equilibrium::EquilibriumResult, k: usize, d: usize) -> bool {
    let x = eq.reports.as_slice();
    (0..k * d).all(|p| {
        let (i, l) = (p / d, p % d);
        if x[p] > 0.0 && x[p] < 1.0 {
            x[p] >= 1e-3 && x[p] <= 1.0 - 1e-3
        } else {
            eq.dual_upper[(i, l)].max(eq.dual_lower[(i, l)]) >= 1e-3
        }
    })
}

/// Implicit Jacobian against central differences of the solver, the loss
/// gradient against differences of the loss, and zero rows for clamped
/// coordinates.
pub fn implicit_differentiation(n: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tight();
    let smooth = [Externality::Proportional, Externality::Congestion];
    let (mut jac_err, mut grad_err): (f64, f64) = (0.0, 0.0);
    let (mut accepted, mut clamped_rows, mut nonzero_clamped) = (0, 0, 0);
    let mut attempts = 0;
    while accepted < n {
        attempts += 1;
        if attempts > 50 * n {
            return Ok((false, format!("only {accepted} nondegenerate games in {attempts} draws")));
        }
        let (inst, w) = random_concave_game(&mut rng, &smooth)?;
        let (k, d) = (inst.active_count(), inst.dim());
        let eq = solve_ne(&inst, &w, &cfg)?;
        if !is_nondegenerate(&eq, k, d) {
            continue;
        }
        accepted += 1;
        let jac = ne_jacobian(&inst, &w, &eq, &cfg)?;
        let x = eq.reports.as_slice();
        for p in 0..k * d {
            let (i, l) = (p / d, p % d);
            let pinned = (x[p] >= 1.0 && eq.dual_upper[(i, l)] > 0.0)
                || (x[p] <= 0.0 && eq.dual_lower[(i, l)] > 0.0);
            if pinned {
                clamped_rows += 1;
                nonzero_clamped += jac.matrix.row(p).iter().any(|&v| v != 0.0) as usize;
            }
        }
        let fd = fd_jacobian(&inst, &w, 1e-5, &cfg)?;
        let diff = (&jac.matrix - &fd).norm();
        // an all-clamped equilibrium has a zero Jacobian; compare absolutely there
        jac_err = jac_err.max(if fd.norm() > 1e-8 { diff / fd.norm() } else { diff });

        let loss = LossFunction::Logistic;
        let g = loss_gradient(&inst, &w, loss, &cfg)?;
        let h = 1e-5;
        let mut fd_grad = vec![0.0; d];
        for (l, out) in fd_grad.iter_mut().enumerate() {
            let shifted = |delta: f64| -> Result<f64> {
                let mut v = w.omega().to_vec();
                v[l] += delta;
                per_sample_loss(&inst, &ClassifierParams::unconstrained(v), loss, &cfg)
            };
            *out = (shifted(h)? - shifted(-h)?) / (2.0 * h);
        }
        let diff: f64 = fd_grad.iter().zip(&g.gradient).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd_grad.iter().map(|a| a * a).sum::<f64>().sqrt();
        grad_err = grad_err.max(if norm > 1e-9 { diff / norm } else { diff });
    }
    Ok((
        jac_err <= 1e-4 && grad_err <= 1e-3 && nonzero_clamped == 0,
        format!(
            "{n} games: Jacobian rel err {jac_err:.2e}, loss-gradient rel err {grad_err:.2e}, \
             {nonzero_clamped}/{clamped_rows} clamped rows nonzero"
        ),
    ))
}

/// Equilibrium displacement over weight changes never exceeds `eta` for the
/// proportional externality with alpha 1, beta 0.5, four agents in two
/// dimensions.
pub fn lipschitz_bound(pairs: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inst, _) = random_game(&mut rng, Externality::Proportional, 4, 2, 1.0, 0.5)?;
    let radius = 2.0;
    let draw_w = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-radius..radius)).collect();
            if v.iter().map(|a| a * a).sum::<f64>() <= radius * radius {
                return v;
            }
        }
    };
    let omegas: Vec<ClassifierParams> =
        (0..20).map(|_| ClassifierParams::unconstrained(draw_w(&mut rng))).collect();
    let reports: Vec<FeatureMatrix> =
        (0..200).map(|_| random_reports(&mut rng, 4, 2)).collect::<Result<_>>()?;
    let lc = lipschitz_constants(&inst, &omegas, &reports)?;
    let cfg = tight();
    let mut ratio: f64 = 0.0;
    for _ in 0..pairs {
        let (w1, w2) = (draw_w(&mut rng), draw_w(&mut rng));
        let dw = w1.iter().zip(&w2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let e1 = solve_ne(&inst, &ClassifierParams::unconstrained(w1), &cfg)?;
        let e2 = solve_ne(&inst, &ClassifierParams::unconstrained(w2), &cfg)?;
        ratio = ratio.max(e1.reports.distance(&e2.reports, 4) / dw);
    }
    Ok((
        ratio <= lc.eta,
        format!("c {:.4}, gamma {:.4}, eta {:.4}; max displacement ratio {ratio:.4}", lc.c, lc.gamma, lc.eta),
    ))
}

/// Biased beliefs about peers' features: no sampled deviation improves the
/// biased utility by more than `2 lambda ||b_i||`.
pub fn imperfect_information(n: usize, deviations: usize, lambda_points: usize, seed: u64) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = tight();
    let mut max_gain: f64 = 0.0;
    let mut violations = 0;
    for t in 0..n {
        let variant = Externality::ALL[t % 3];
        let (k, d) = (rng.gen_range(2..=5), rng.gen_range(1..=3));
        let alpha = rng.gen_range(0.5..2.0);
        let beta = rng.gen_range(0.0..0.95) * concave_beta_limit(variant, alpha);
        let (inst, w) = random_game(&mut rng, variant, k, d, alpha, beta)?;
        let eq = solve_ne(&inst, &w, &cfg)?;
        let lambda = estimate_externality_lipschitz(&inst, lambda_points, &mut rng);
        let biases: Vec<DMatrix<f64>> = (0..k)
            .map(|i| {
                let mut b = DMatrix::from_fn(k, d, |j, _| if j == i { 0.0 } else { rng.gen_range(-1.0..1.0) });
                let norm = b.norm();
                if norm > 0.0 {
                    b *= rng.gen_range(0.0..0.1) / norm;
                }
                b
            })
            .collect();
        let report = imperfect_info_check(&inst, &w, &eq, &biases, lambda, deviations, &mut rng)?;
        for (g, b) in report.gains.iter().zip(&report.bounds) {
            max_gain = max_gain.max(*g);
            violations += (*g > b + 1e-6) as usize;
        }
    }
    Ok((
        violations == 0,
        format!("{n} games x {deviations} deviations, {violations} violations, largest gain {max_gain:.2e}"),
    ))
}

/// Sample-complexity bound grows when the accuracy is halved, the dimension
/// increases or the Lipschitz constant increases.
pub fn bound_monotonicity() -> Result<(bool, String)> {
    let base = |eps: f64, d: usize, eta: f64| sample_complexity(eps, 0.05, d, 1.0, eta, 1.0);
    let mut ok = true;
    for eps in [0.05, 0.1, 0.2, 0.4] {
        ok &= base(eps / 2.0, 2, 1.0)? > 4 * base(eps, 2, 1.0)?;
    }
    for d in 1..10 {
        ok &= base(0.1, d + 1, 1.0)? >= base(0.1, d, 1.0)?;
    }
    for eta in [0.5, 1.0, 2.0, 8.0] {
        ok &= base(0.1, 2, 2.0 * eta)? >= base(0.1, 2, eta)?;
    }
    Ok((ok, format!("n(0.1, 0.05, 2, 1, 1, 1) = {}", base(0.1, 2, 1.0)?)))
}

/// Strategic training on the configured population lowers both losses.
pub fn training_descends(cfg: &ExperimentConfig) -> Result<(bool, String)> {
    let seed = cfg.seeds[0];
    let cell = Cell { k: None, alpha: cfg.alpha, beta: cfg.beta };
    let (tr, va) = datasets(cfg, cell, seed)?;
    let t = train(&tr, &va, &cfg.train_config(Mode::Strategic, seed))?;
    let (tl, vl) = (*t.train_loss.last().unwrap(), *t.val_loss.last().unwrap());
    Ok((
        tl < t.initial_train_loss && vl < t.initial_val_loss,
        format!(
            "seed {seed}: train {:.4} -> {tl:.4}, validation {:.4} -> {vl:.4}",
            t.initial_train_loss, t.initial_val_loss
        ),
    ))
}

/// Every suite, with the training suite driven by `cfg` and the random games
/// seeded from its first seed.
pub fn run_all(cfg: &ExperimentConfig, sizes: &SuiteSizes) -> Vec<CheckOutcome> {
    let seed = cfg.seeds[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let games: Result<Vec<_>> =
        (0..sizes.concave_instances).map(|_| random_concave_game(&mut rng, &Externality::ALL)).collect();
    let (uniq, br) = match games {
        Ok(g) => (uniqueness(&g, sizes.multistarts, seed), best_response_dynamics(&g, seed)),
        Err(e) => {
            let msg = format!("cannot build games: {e}");
            (Ok((false, msg.clone())), Ok((false, msg)))
        }
    };
    vec![
        CheckOutcome::from_result("potential identity", potential_identity(sizes.potential_triples, seed)),
        CheckOutcome::from_result("equilibrium uniqueness", uniq),
        CheckOutcome::from_result("oracle equivalence", oracle_equivalence(sizes.grid_instances, seed)),
        CheckOutcome::from_result("best-response dynamics", br),
        CheckOutcome::from_result("convexity thresholds", convexity_thresholds(sizes.convexity_samples, seed)),
        CheckOutcome::from_result(
            "implicit differentiation",
            implicit_differentiation(sizes.jacobian_instances, seed),
        ),
        CheckOutcome::from_result("lipschitz bound", lipschitz_bound(sizes.lipschitz_pairs, seed)),
        CheckOutcome::from_result(
            "imperfect information",
            imperfect_information(
                sizes.imperfect_instances,
                sizes.imperfect_deviations,
                sizes.lambda_points,
                seed,
            ),
        ),
        CheckOutcome::from_result("bound monotonicity", bound_monotonicity()),
        CheckOutcome::from_result("training descends", training_descends(cfg)),
    ]
}
