//! Flat `key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};

use stratext_core::diff::LossFunction;
use stratext_core::equilibrium::SolverConfig;
use stratext_core::game::{CostModel, Externality, GainFunction};
use stratext_core::learning::{GameTemplate, Mode, PopulationModel, TrainConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(line) = self.line {
            write!(f, "line {line}: ")?;
        }
        if let Some(key) = &self.key {
            write!(f, "`{key}`: ")?;
        }
        f.write_str(&self.message)
    }
}

impl ConfigError {
    fn key(key: &str, message: impl Into<String>) -> Self {
        Self { line: None, key: Some(key.to_string()), message: message.into() }
    }

    fn at_line(mut self, line: usize) -> Self {
        self.line = Some(line);
        self
    }
}

/// Every recognised key with its default and meaning, in serialization order.
pub const DEFAULTS: &[(&str, &str, &str)] = &[
    ("experiment", "default", "run id written to the first CSV column and used in file names"),
    ("d", "2", "feature dimension"),
    ("mean_pos", "0.7,0.3", "mean of the positive class blob"),
    ("mean_neg", "0.3,0.7", "mean of the negative class blob"),
    ("stddev", "0.15", "shared isotropic blob standard deviation before clipping to the box"),
    ("pos_fraction", "0.5", "probability that a sampled agent is positive"),
    ("k_weights", "0,0,0,1", "weights of k = 1..k_max; the length sets k_max"),
    ("alpha", "1", "quadratic manipulation cost"),
    ("beta", "1", "externality strength"),
    ("externality", "convex_square_sum", "convex_square_sum, proportional or congestion"),
    ("gain", "1", "constant marginal value of a higher score"),
    ("epochs", "30", "training epochs"),
    ("batch_size", "10", "instances per gradient step"),
    ("learning_rate", "1", "gradient step size"),
    ("norm_budget", "4", "radius of the weight ball"),
    ("loss", "logistic", "logistic or hinge"),
    ("kkt_tolerance", "1e-8", "equilibrium solver stopping tolerance"),
    ("max_iterations", "10000", "equilibrium solver iteration cap"),
    ("modes", "strategic,truthful,cost_only", "agent models used during training"),
    ("n_train", "50", "training instances per seed"),
    ("n_val", "50", "validation instances per seed"),
    ("seeds", "0,1,2,3,4,5,6,7,8,9,10,11,12,13,14", "one dataset and run per seed"),
    ("grid_k", "", "ablation over a fixed number of agents; empty uses k_weights"),
    ("grid_alpha", "", "ablation over alpha; empty uses alpha"),
    ("grid_beta", "", "ablation over beta; empty uses beta"),
    ("omega", "1,-1", "classifier weights for solve and gradcheck"),
    ("output_dir", "out", "directory receiving experiment CSV files"),
    ("threads", "0", "worker threads for experiments; 0 picks the machine default"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub d: usize,
    pub mean_pos: Vec<f64>,
    pub mean_neg: Vec<f64>,
    pub stddev: f64,
    pub pos_fraction: f64,
    pub k_weights: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub externality: Externality,
    pub gain: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub norm_budget: f64,
    pub loss: LossFunction,
    pub kkt_tolerance: f64,
    pub max_iterations: usize,
    pub modes: Vec<Mode>,
    pub n_train: usize,
    pub n_val: usize,
    pub seeds: Vec<u64>,
    pub grid_k: Vec<usize>,
    pub grid_alpha: Vec<f64>,
    pub grid_beta: Vec<f64>,
    pub omega: Vec<f64>,
    pub output_dir: PathBuf,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            experiment: String::new(),
            d: 0,
            mean_pos: vec![],
            mean_neg: vec![],
            stddev: 0.0,
            pos_fraction: 0.0,
            k_weights: vec![],
            alpha: 0.0,
            beta: 0.0,
            externality: Externality::ConvexSquareSum,
            gain: 0.0,
            epochs: 0,
            batch_size: 0,
            learning_rate: 0.0,
            norm_budget: 0.0,
            loss: LossFunction::Logistic,
            kkt_tolerance: 0.0,
            max_iterations: 0,
            modes: vec![],
            n_train: 0,
            n_val: 0,
            seeds: vec![],
            grid_k: vec![],
            grid_alpha: vec![],
            grid_beta: vec![],
            omega: vec![],
            output_dir: PathBuf::new(),
            threads: 0,
        };
        for (key, value, _) in DEFAULTS {
            cfg.set(key, value).expect("defaults parse");
        }
        cfg
    }
}

fn scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::key(key, format!("cannot parse {value:?}")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(vec![]);
    }
    value.split(',').map(|v| scalar(key, v)).collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Parses the file text and validates the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of `text` on top of the current
    /// values, without validating the result.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError {
                    line: Some(n + 1),
                    key: None,
                    message: format!("expected `key = value`, got {line:?}"),
                });
            };
            self.set(key.trim(), value.trim()).map_err(|e| e.at_line(n + 1))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            line: None,
            key: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    /// One `key = value` line per key, in the order of [`DEFAULTS`].
    pub fn serialize(&self) -> String {
        DEFAULTS.iter().map(|(key, _, _)| format!("{key} = {}\n", self.get(key).unwrap())).collect()
    }

    /// Assigns one key from its text form without cross-key validation.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "experiment" => self.experiment = value.trim().to_string(),
            "d" => self.d = scalar(key, value)?,
            "mean_pos" => self.mean_pos = list(key, value)?,
            "mean_neg" => self.mean_neg = list(key, value)?,
            "stddev" => self.stddev = scalar(key, value)?,
            "pos_fraction" => self.pos_fraction = scalar(key, value)?,
            "k_weights" => self.k_weights = list(key, value)?,
            "alpha" => self.alpha = scalar(key, value)?,
            "beta" => self.beta = scalar(key, value)?,
            "externality" => {
                self.externality = Externality::parse(value.trim())
                    .ok_or_else(|| ConfigError::key(key, format!("unknown externality {value:?}")))?
            }
            "gain" => self.gain = scalar(key, value)?,
            "epochs" => self.epochs = scalar(key, value)?,
            "batch_size" => self.batch_size = scalar(key, value)?,
            "learning_rate" => self.learning_rate = scalar(key, value)?,
            "norm_budget" => self.norm_budget = scalar(key, value)?,
            "loss" => {
                self.loss = LossFunction::parse(value.trim())
                    .ok_or_else(|| ConfigError::key(key, format!("unknown loss {value:?}")))?
            }
            "kkt_tolerance" => self.kkt_tolerance = scalar(key, value)?,
            "max_iterations" => self.max_iterations = scalar(key, value)?,
            "modes" => {
                self.modes = value
                    .split(',')
                    .filter(|m| !m.trim().is_empty())
                    .map(|m| {
                        Mode::parse(m.trim())
                            .ok_or_else(|| ConfigError::key(key, format!("unknown mode {m:?}")))
                    })
                    .collect::<Result<_, _>>()?
            }
            "n_train" => self.n_train = scalar(key, value)?,
            "n_val" => self.n_val = scalar(key, value)?,
            "seeds" => self.seeds = list(key, value)?,
            "grid_k" => self.grid_k = list(key, value)?,
            "grid_alpha" => self.grid_alpha = list(key, value)?,
            "grid_beta" => self.grid_beta = list(key, value)?,
            "omega" => self.omega = list(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value.trim()),
            "threads" => self.threads = scalar(key, value)?,
            _ => return Err(ConfigError { line: None, key: None, message: format!("unknown key `{key}`") }),
        }
        Ok(())
    }

    /// Text form of one key, reparsing to the same value.
    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "experiment" => self.experiment.clone(),
            "d" => self.d.to_string(),
            "mean_pos" => join(&self.mean_pos),
            "mean_neg" => join(&self.mean_neg),
            "stddev" => self.stddev.to_string(),
            "pos_fraction" => self.pos_fraction.to_string(),
            "k_weights" => join(&self.k_weights),
            "alpha" => self.alpha.to_string(),
            "beta" => self.beta.to_string(),
            "externality" => self.externality.name().to_string(),
            "gain" => self.gain.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "norm_budget" => self.norm_budget.to_string(),
            "loss" => self.loss.name().to_string(),
            "kkt_tolerance" => self.kkt_tolerance.to_string(),
            "max_iterations" => self.max_iterations.to_string(),
            "modes" => self.modes.iter().map(|m| m.name()).collect::<Vec<_>>().join(","),
            "n_train" => self.n_train.to_string(),
            "n_val" => self.n_val.to_string(),
            "seeds" => join(&self.seeds),
            "grid_k" => join(&self.grid_k),
            "grid_alpha" => join(&self.grid_alpha),
            "grid_beta" => join(&self.grid_beta),
            "omega" => join(&self.omega),
            "output_dir" => self.output_dir.display().to_string(),
            "threads" => self.threads.to_string(),
            _ => return None,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &str, msg: String| Err(ConfigError::key(key, msg));
        let id_ok = |c: char| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.';
        if self.experiment.is_empty() || !self.experiment.chars().all(id_ok) {
            return bad("experiment", "must be nonempty letters, digits, '_', '-' or '.'".into());
        }
        if self.d == 0 {
            return bad("d", "must be at least 1".into());
        }
        for (key, v) in [("mean_pos", &self.mean_pos), ("mean_neg", &self.mean_neg), ("omega", &self.omega)] {
            if v.len() != self.d {
                return bad(key, format!("has {} entries but d = {}", v.len(), self.d));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return bad(key, "entries must be finite".into());
            }
        }
        for (key, v) in [("mean_pos", &self.mean_pos), ("mean_neg", &self.mean_neg)] {
            if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return bad(key, "entries must lie in [0, 1]".into());
            }
        }
        if !(self.stddev >= 0.0 && self.stddev.is_finite()) {
            return bad("stddev", format!("must be finite and nonnegative, got {}", self.stddev));
        }
        if !(0.0..=1.0).contains(&self.pos_fraction) {
            return bad("pos_fraction", format!("must lie in [0, 1], got {}", self.pos_fraction));
        }
        let total: f64 = self.k_weights.iter().sum();
        if self.k_weights.is_empty()
            || self.k_weights.iter().any(|w| !(*w >= 0.0 && w.is_finite()))
            || !(total > 0.0)
        {
            return bad("k_weights", "must be nonnegative with a positive sum".into());
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", format!("must be positive, got {}", self.alpha));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta", format!("must be nonnegative, got {}", self.beta));
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return bad("gain", format!("must be positive, got {}", self.gain));
        }
        if self.epochs == 0 {
            return bad("epochs", "must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be nonnegative, got {}", self.learning_rate));
        }
        if !(self.norm_budget > 0.0 && self.norm_budget.is_finite()) {
            return bad("norm_budget", format!("must be positive, got {}", self.norm_budget));
        }
        if !(self.kkt_tolerance > 0.0) {
            return bad("kkt_tolerance", format!("must be positive, got {}", self.kkt_tolerance));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations", "must be at least 1".into());
        }
        if self.modes.is_empty() {
            return bad("modes", "must name at least one mode".into());
        }
        if (1..self.modes.len()).any(|i| self.modes[..i].contains(&self.modes[i])) {
            return bad("modes", "lists a mode twice".into());
        }
        if self.n_train == 0 {
            return bad("n_train", "must be at least 1".into());
        }
        if self.n_val == 0 {
            return bad("n_val", "must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds", "must list at least one seed".into());
        }
        if self.grid_k.contains(&0) {
            return bad("grid_k", "entries must be at least 1".into());
        }
        if self.grid_alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return bad("grid_alpha", "entries must be positive".into());
        }
        if self.grid_beta.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return bad("grid_beta", "entries must be nonnegative".into());
        }
        if self.output_dir.as_os_str().is_empty() {
            return bad("output_dir", "must be nonempty".into());
        }
        Ok(())
    }

    pub fn population(&self) -> PopulationModel {
        self.population_with(&self.k_weights)
    }

    pub(crate) fn population_with(&self, k_weights: &[f64]) -> PopulationModel {
        PopulationModel::new(
            self.mean_pos.clone(),
            self.mean_neg.clone(),
            self.stddev,
            self.pos_fraction,
            k_weights.to_vec(),
        )
        .expect("validated population")
    }

    pub fn template(&self) -> GameTemplate {
        self.template_with(self.alpha, self.beta)
    }

    pub(crate) fn template_with(&self, alpha: f64, beta: f64) -> GameTemplate {
        GameTemplate {
            cost: CostModel::new(alpha).expect("validated alpha"),
            externality: self.externality,
            beta,
            gain: GainFunction::new_constant(self.gain).expect("validated gain"),
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            kkt_tolerance: self.kkt_tolerance,
            max_iterations: self.max_iterations,
            ..SolverConfig::default()
        }
    }

    pub fn train_config(&self, mode: Mode, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            norm_budget: self.norm_budget,
            loss: self.loss,
            solver: self.solver(),
            mode,
            seed,
        }
    }
}
