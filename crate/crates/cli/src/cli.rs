//! Argument parsing and subcommand dispatch.

use std::io::{IsTerminal, Write};

use clap::{Arg, ArgAction, ArgMatches, ColorChoice, Command};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stratext_core::diff::{fd_jacobian, loss_gradient, ne_jacobian};
use stratext_core::equilibrium::solve_ne;
use stratext_core::game::{ClassifierParams, FeatureMatrix, GameInstance};
use stratext_core::learning::{
    estimate_externality_lipschitz, lipschitz_constants, per_sample_loss, sample_complexity,
    sample_instance, train, Mode,
};

use crate::checks::{run_all, SuiteSizes};
use crate::config::{ExperimentConfig, DEFAULTS};
use crate::experiment::{datasets, run_experiment, Cell};
use crate::output::{format_sig, render_records, CsvRecord};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

enum Failure {
    Usage(String),
    Run(String),
}

impl From<stratext_core::Error> for Failure {
    fn from(e: stratext_core::Error) -> Self {
        match e {
            stratext_core::Error::Usage(m) => Failure::Usage(m),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(format!("i/o: {e}"))
    }
}

type Outcome = Result<i32, Failure>;

fn colors_enabled() -> bool {
    std::env::var_os("NO_COLOR").is_none() && std::io::stderr().is_terminal()
}

fn config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config").long("config").value_name("PATH").help("key = value file; flags override it"),
    );
    DEFAULTS.iter().fold(cmd, |cmd, (key, default, help)| {
        cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .allow_hyphen_values(true)
                .help(format!("{help} [default: {default}]")),
        )
    })
}

pub fn command() -> Command {
    let color = if colors_enabled() { ColorChoice::Auto } else { ColorChoice::Never };
    let positive = |name: &'static str, help: &'static str| {
        Arg::new(name).long(name).required(true).allow_hyphen_values(true).help(help)
    };
    Command::new("stratext")
        .about("Equilibria, gradients and training for strategic classification with agent externalities")
        .color(color)
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(
            Command::new("solve").about("Solve the equilibrium of one sampled episode under `omega`"),
        ))
        .subcommand(config_args(
            Command::new("gradcheck")
                .about("Compare the implicit Jacobian and loss gradient with finite differences"),
        ))
        .subcommand(config_args(
            Command::new("train")
                .about("Train one mode on the first seed and print its loss curve as CSV")
                .arg(Arg::new("mode").long("mode").default_value("strategic").help("strategic, truthful or cost_only"))
                .arg(Arg::new("out").long("out").value_name("PATH").help("write the CSV here instead of stdout")),
        ))
        .subcommand(config_args(
            Command::new("experiment").about("Train every mode over seeds and the ablation grid; write CSV files"),
        ))
        .subcommand(config_args(
            Command::new("check")
                .about("Run the invariant suites; exit status 1 if any fails")
                .arg(Arg::new("full").long("full").action(ArgAction::SetTrue).help("use the full trial counts")),
        ))
        .subcommand(
            Command::new("bound")
                .about("Evaluate the sample-complexity bound")
                .arg(positive("eps", "target accuracy, in (0, 1)"))
                .arg(positive("gamma", "confidence parameter"))
                .arg(positive("d", "feature dimension"))
                .arg(positive("lambda", "Lipschitz constant of the loss"))
                .arg(positive("eta", "Lipschitz constant of the equilibrium in the weights"))
                .arg(positive("r", "weight norm budget")),
        )
        .subcommand(config_args(
            Command::new("lipschitz").about("Estimate curvature and Lipschitz constants for the configured game"),
        ))
}

fn load(m: &ArgMatches) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match m.get_one::<String>("config") {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {path}: {e}")))?;
            let mut cfg = ExperimentConfig::default();
            // Validation waits until flags are applied, so a flag can repair a file.
            cfg.apply_text(&text).map_err(|e| Failure::Usage(format!("{path}: {e}")))?;
            cfg
        }
        None => ExperimentConfig::default(),
    };
    for (key, _, _) in DEFAULTS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v).map_err(|e| Failure::Usage(format!("--{key}: {e}")))?;
        }
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

/// Episode of the configured population drawn from the first seed.
fn episode(cfg: &ExperimentConfig) -> stratext_core::Result<GameInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds[0]);
    sample_instance(&cfg.population(), &cfg.template(), &mut rng)
}

fn fmt_row(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| format_sig(*x)).collect::<Vec<_>>().join(", "))
}

fn solve(cfg: &ExperimentConfig, out: &mut dyn Write) -> Outcome {
    let inst = episode(cfg)?;
    let w = ClassifierParams::unconstrained(cfg.omega.clone());
    let eq = solve_ne(&inst, &w, &cfg.solver())?;
    writeln!(out, "externality: {}", inst.externality().variant().name())?;
    writeln!(out, "alpha: {}", format_sig(inst.cost_model().alpha()))?;
    writeln!(out, "beta: {}", format_sig(inst.externality().beta()))?;
    writeln!(out, "k: {}", inst.active_count())?;
    writeln!(out, "d: {}", inst.dim())?;
    writeln!(out, "omega: {}", fmt_row(w.omega()))?;
    writeln!(out, "converged: {}", eq.converged)?;
    writeln!(out, "iterations: {}", eq.iterations)?;
    writeln!(out, "kkt_residual: {:.3e}", eq.kkt_residual)?;
    writeln!(out, "potential: {}", format_sig(inst.potential(&eq.reports, &w)?))?;
    for i in 0..inst.active_count() {
        writeln!(out, "agent {i}:")?;
        writeln!(out, "  label: {}", inst.labels().get(i))?;
        writeln!(out, "  features: {}", fmt_row(inst.features().row(i)))?;
        writeln!(out, "  report: {}", fmt_row(eq.report(i)))?;
        writeln!(out, "  dual_upper: {}", fmt_row(&eq.dual_upper.row(i).iter().copied().collect::<Vec<_>>()))?;
        writeln!(out, "  dual_lower: {}", fmt_row(&eq.dual_lower.row(i).iter().copied().collect::<Vec<_>>()))?;
        writeln!(out, "  utility: {}", format_sig(inst.agent_utility(i, &eq.reports, &w)?))?;
    }
    Ok(0)
}

fn gradcheck(cfg: &ExperimentConfig, out: &mut dyn Write) -> Outcome {
    let inst = episode(cfg)?;
    let w = ClassifierParams::unconstrained(cfg.omega.clone());
    let solver = cfg.solver().with_tolerance(cfg.kkt_tolerance.min(1e-12));
    let eq = solve_ne(&inst, &w, &solver)?;
    let mut ok = true;
    match ne_jacobian(&inst, &w, &eq, &solver) {
        Ok(jac) if jac.valid => {
            let fd = fd_jacobian(&inst, &w, 1e-5, &solver)?;
            let err = (&jac.matrix - &fd).norm() / fd.norm().max(1e-12);
            ok &= err <= 1e-4;
            writeln!(out, "jacobian_rel_error: {err:.3e}")?;
        }
        Ok(jac) => writeln!(
            out,
            "jacobian: degenerate at coordinates {:?}; loss gradient uses finite differences",
            jac.degenerate_coords
        )?,
        Err(e) => writeln!(out, "jacobian: unavailable ({e}); loss gradient uses finite differences")?,
    }
    let g = loss_gradient(&inst, &w, cfg.loss, &solver)?;
    let h = 1e-5;
    let mut fd = vec![0.0; inst.dim()];
    for (l, slot) in fd.iter_mut().enumerate() {
        let at = |delta: f64| -> stratext_core::Result<f64> {
            let mut v = cfg.omega.clone();
            v[l] += delta;
            per_sample_loss(&inst, &ClassifierParams::unconstrained(v), cfg.loss, &solver)
        };
        *slot = (at(h)? - at(-h)?) / (2.0 * h);
    }
    let diff = fd.iter().zip(&g.gradient).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm = fd.iter().map(|a| a * a).sum::<f64>().sqrt();
    let err = diff / norm.max(1e-12);
    ok &= err <= 1e-3 || diff <= 1e-9;
    writeln!(out, "loss_gradient: {}", fmt_row(&g.gradient))?;
    writeln!(out, "finite_difference: {}", fmt_row(&fd))?;
    writeln!(out, "loss_gradient_rel_error: {err:.3e}")?;
    writeln!(out, "fallback: {}", g.fallback)?;
    writeln!(out, "status: {}", if ok { "ok" } else { "mismatch" })?;
    Ok(if ok { 0 } else { EXIT_FAILURE })
}

fn train_one(cfg: &ExperimentConfig, m: &ArgMatches, out: &mut dyn Write) -> Outcome {
    let name = m.get_one::<String>("mode").expect("defaulted");
    let mode = Mode::parse(name).ok_or_else(|| Failure::Usage(format!("unknown mode {name:?}")))?;
    let seed = cfg.seeds[0];
    let cell = Cell { k: None, alpha: cfg.alpha, beta: cfg.beta };
    let (tr, va) = datasets(cfg, cell, seed)?;
    let trace = train(&tr, &va, &cfg.train_config(mode, seed))?;
    let records: Vec<CsvRecord> = (0..cfg.epochs)
        .map(|e| CsvRecord {
            experiment: cfg.experiment.clone(),
            mode,
            seed,
            epoch: e + 1,
            k: cfg.k_weights.len(),
            alpha: cfg.alpha,
            beta: cfg.beta,
            train_loss: trace.train_loss[e],
            val_loss: trace.val_loss[e],
        })
        .collect();
    let csv = render_records(&records);
    match m.get_one::<String>("out") {
        Some(path) => std::fs::write(path, csv)?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(0)
}

fn experiment(cfg: &ExperimentConfig, out: &mut dyn Write, err: &mut dyn Write) -> Outcome {
    let result = run_experiment(cfg).map_err(Failure::Run)?;
    for f in &result.failures {
        let k = f.cell.k.map_or("sampled".to_string(), |k| k.to_string());
        writeln!(
            err,
            "skipped cell k={k} alpha={} beta={}: seed {} mode {}: {}",
            format_sig(f.cell.alpha),
            format_sig(f.cell.beta),
            f.seed,
            f.mode.name(),
            f.error
        )?;
    }
    let paths = result.write(cfg)?;
    writeln!(out, "records: {} ({} rows)", paths[0].display(), result.records.len())?;
    writeln!(out, "summary: {} ({} rows)", paths[1].display(), result.summary.len())?;
    Ok(if result.records.is_empty() { EXIT_FAILURE } else { 0 })
}

fn check(cfg: &ExperimentConfig, m: &ArgMatches, out: &mut dyn Write) -> Outcome {
    let sizes = if m.get_flag("full") { SuiteSizes::FULL } else { SuiteSizes::QUICK };
    let outcomes = run_all(cfg, &sizes);
    for o in &outcomes {
        writeln!(out, "{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail)?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    writeln!(out, "{} of {} suites passed", outcomes.len() - failed, outcomes.len())?;
    Ok(if failed == 0 { 0 } else { EXIT_FAILURE })
}

fn bound(m: &ArgMatches, out: &mut dyn Write) -> Outcome {
    let num = |name: &str| -> Result<f64, Failure> {
        let v = m.get_one::<String>(name).expect("required");
        v.parse().map_err(|_| Failure::Usage(format!("--{name}: cannot parse {v:?}")))
    };
    let d_text = m.get_one::<String>("d").expect("required");
    let d: usize = d_text.parse().map_err(|_| Failure::Usage(format!("--d: cannot parse {d_text:?}")))?;
    let n = sample_complexity(num("eps")?, num("gamma")?, d, num("lambda")?, num("eta")?, num("r")?)?;
    writeln!(out, "{n}")?;
    Ok(0)
}

fn lipschitz(cfg: &ExperimentConfig, out: &mut dyn Write) -> Outcome {
    let inst = episode(cfg)?;
    let (k, d) = (inst.active_count(), inst.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds[0]);
    let lambda = estimate_externality_lipschitz(&inst, 10_000, &mut rng);
    writeln!(out, "k: {k}")?;
    writeln!(out, "lambda_ext: {}", format_sig(lambda))?;
    let omegas: Vec<ClassifierParams> = (0..20)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            ClassifierParams::projected(v.iter().map(|x| x * cfg.norm_budget).collect(), cfg.norm_budget)
        })
        .collect::<stratext_core::Result<_>>()?;
    let reports: Vec<FeatureMatrix> = (0..200)
        .map(|_| {
            let rows = inst.features().rows();
            FeatureMatrix::from_row_major(rows, d, (0..rows * d).map(|_| rand::Rng::gen(&mut rng)).collect())
        })
        .collect::<stratext_core::Result<_>>()?;
    let lc = lipschitz_constants(&inst, &omegas, &reports)?;
    writeln!(out, "c: {}", format_sig(lc.c))?;
    writeln!(out, "gamma: {}", format_sig(lc.gamma))?;
    writeln!(out, "eta: {}", format_sig(lc.eta))?;
    Ok(0)
}

/// Runs the command line and returns the process exit status.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = if colors_enabled() { e.render().ansi().to_string() } else { e.render().to_string() };
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let (name, m) = matches.subcommand().expect("subcommand required");
    let outcome = match name {
        "bound" => bound(m, out),
        _ => load(m).and_then(|cfg| match name {
            "solve" => solve(&cfg, out),
            "gradcheck" => gradcheck(&cfg, out),
            "train" => train_one(&cfg, m, out),
            "experiment" => experiment(&cfg, out, err),
            "check" => check(&cfg, m, out),
            "lipschitz" => lipschitz(&cfg, out),
            other => Err(Failure::Usage(format!("unknown subcommand {other}"))),
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(f) => {
            let (code, msg) = match f {
                Failure::Usage(m) => (EXIT_USAGE, m),
                Failure::Run(m) => (EXIT_FAILURE, m),
            };
            let label = if colors_enabled() { "\x1b[1;31merror\x1b[0m" } else { "error" };
            let _ = writeln!(err, "{label}: {msg}");
            code
        }
    }
}
