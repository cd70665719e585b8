use stratext_cli::cli::{run, EXIT_FAILURE, EXIT_USAGE};
use stratext_cli::output::{Interval, RECORD_HEADER};
use stratext_cli::{run_experiment, ExperimentConfig};

fn invoke(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let mut argv = vec!["stratext"];
    argv.extend_from_slice(args);
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn field<'a>(text: &'a str, prefix: &str) -> Vec<&'a str> {
    text.lines().filter_map(|l| l.trim().strip_prefix(prefix)).collect()
}

#[test]
fn zero_weights_leave_reports_truthful() {
    let (code, out, _) = invoke(&["solve", "--omega", "0,0"]);
    assert_eq!(code, 0);
    let features = field(&out, "features: ");
    assert_eq!(features.len(), 4);
    assert_eq!(features, field(&out, "report: "));
}

#[test]
fn check_passes_on_defaults() {
    let (code, out, _) = invoke(&["check"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.lines().filter(|l| l.starts_with("PASS")).count() >= 10);
    assert!(!out.contains("FAIL"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(invoke(&["frobnicate"]).0, EXIT_USAGE);
    assert_eq!(invoke(&["solve", "--no-such-flag", "1"]).0, EXIT_USAGE);
    assert_eq!(invoke(&["bound", "--eps", "0.1"]).0, EXIT_USAGE);
    let (code, _, err) = invoke(&["solve", "--beta", "-1"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("beta"));
    assert_eq!(invoke(&[]).0, EXIT_USAGE);
}

#[test]
fn runtime_failures_exit_one() {
    let (code, _, err) = invoke(&["bound", "--eps", "1.5", "--gamma", "0.05", "--d", "2", "--lambda", "1", "--eta", "1", "--r", "1"]);
    assert_eq!(code, EXIT_FAILURE);
    assert!(err.contains("eps"));
    // the square-sum externality has no curvature constant at truthful reports
    assert_eq!(invoke(&["lipschitz"]).0, EXIT_FAILURE);
}

#[test]
fn lipschitz_reports_constants_for_smooth_games() {
    let (code, out, _) = invoke(&["lipschitz", "--externality", "proportional", "--beta", "0.5"]);
    assert_eq!(code, 0);
    let eta: f64 = field(&out, "eta: ")[0].parse().unwrap();
    let gamma: f64 = field(&out, "gamma: ")[0].parse().unwrap();
    let c: f64 = field(&out, "c: ")[0].parse().unwrap();
    assert!((eta - gamma / c).abs() <= 1e-8 * eta);
}

#[test]
fn gradcheck_agrees_on_smooth_game() {
    let (code, out, _) = invoke(&["gradcheck", "--externality", "congestion", "--beta", "0.3", "--omega", "0.8,-0.4"]);
    assert_eq!(code, 0, "{out}");
    assert!(out.contains("status: ok"));
    assert!(out.contains("jacobian_rel_error"));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "# short run\nepochs = 2\nseeds = 4, 5\nn_train = 8\nn_val = 5\nmodes = strategic\n").unwrap();
    let out_dir = dir.path().join("out");
    let (code, _, err) = invoke(&[
        "experiment",
        "--config",
        path.to_str().unwrap(),
        "--epochs",
        "3",
        "--experiment",
        "short",
        "--output_dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(out_dir.join("short.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(RECORD_HEADER));
    assert_eq!(lines.count(), 2 * 3);

    std::fs::write(&path, "epochs = 2\nunknown_key = 1\n").unwrap();
    let (code, _, err) = invoke(&["solve", "--config", path.to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("line 2") && err.contains("unknown_key"), "{err}");
}

#[test]
fn train_writes_one_row_per_epoch() {
    let (code, out, _) = invoke(&["train", "--mode", "truthful", "--epochs", "4", "--n_train", "10", "--n_val", "5"]);
    assert_eq!(code, 0);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.starts_with("default,truthful,0,")));
    assert_eq!(invoke(&["train", "--mode", "lazy"]).0, EXIT_USAGE);
}

#[test]
fn record_count_matches_the_grid() {
    let mut cfg = ExperimentConfig::default();
    for (k, v) in [
        ("epochs", "2"),
        ("seeds", "1,2"),
        ("n_train", "6"),
        ("n_val", "4"),
        ("batch_size", "3"),
        ("grid_k", "2,3"),
        ("grid_beta", "0,0.5"),
    ] {
        cfg.set(k, v).unwrap();
    }
    let out = run_experiment(&cfg).unwrap();
    assert!(out.failures.is_empty());
    assert_eq!(out.records.len(), 3 * 2 * 2 * 4);
    assert_eq!(out.summary.len(), 3 * 2 * 4);
    assert!(out.records.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
    assert_eq!(run_experiment(&cfg).unwrap().records_csv(), out.records_csv());
}

#[test]
fn interval_matches_reference_percentiles() {
    // reference values from numpy.percentile with linear interpolation
    let losses = [
        0.512, 0.498, 0.731, 0.455, 0.602, 0.588, 0.499, 0.530, 0.471, 0.661, 0.519, 0.544, 0.503,
        0.577, 0.490,
    ];
    let iv = Interval::of(&losses);
    assert!((iv.p05 - 0.4662).abs() < 1e-12);
    assert!((iv.p95 - 0.6819999999999999).abs() < 1e-12);
    assert!((iv.mean - 0.5453333333333333).abs() < 1e-12);
    let iv = Interval::of(&[3.0, 1.0, 2.0]);
    assert!((iv.p05 - 1.1).abs() < 1e-12 && (iv.p95 - 2.9).abs() < 1e-12);
}
