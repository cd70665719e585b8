use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diff::{loss_gradient, LossFunction};
use crate::equilibrium::SolverConfig;
use crate::error::{Error, Result};
use crate::game::{ClassifierParams, GameInstance};

use super::risk::{per_sample_loss, truthful_loss, truthful_loss_gradient};
use super::Dataset;

/// Agent model assumed while training. Validation is always strategic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Agents play the equilibrium with cost and externality.
    Strategic,
    /// Agents report their true features.
    Truthful,
    /// Agents best-respond to the cost alone, ignoring externalities.
    CostOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Strategic, Mode::Truthful, Mode::CostOnly];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Strategic => "strategic",
            Mode::Truthful => "truthful",
            Mode::CostOnly => "cost_only",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero is accepted and freezes the weights.
    pub learning_rate: f64,
    pub norm_budget: f64,
    pub loss: LossFunction,
    pub solver: SolverConfig,
    pub mode: Mode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be finite and nonnegative".into()));
        }
        if !(self.norm_budget > 0.0) || !self.norm_budget.is_finite() {
            return Err(Error::Config("norm_budget must be positive".into()));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    /// Training risk under the mode's agent model after each epoch.
    pub train_loss: Vec<f64>,
    /// Strategic validation risk after each epoch.
    pub val_loss: Vec<f64>,
    pub omega: ClassifierParams,
    /// Gradients that fell back to finite differences.
    pub fallback_gradients: usize,
}

/// Projected minibatch gradient descent on the weights, starting from zero.
pub fn train(data: &Dataset, val_data: &Dataset, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    if data.is_empty() || val_data.is_empty() {
        return Err(Error::Usage("training and validation data must be nonempty".into()));
    }
    let d = data.instances[0].dim();
    let mut omega = ClassifierParams::zeros(d, cfg.norm_budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainTrace {
        initial_train_loss: train_risk(data, &omega, cfg)?,
        initial_val_loss: val_risk(val_data, &omega, cfg)?,
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        omega: omega.clone(),
        fallback_gradients: 0,
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = vec![0.0; d];
            for &n in batch {
                let (g, fallback) = instance_gradient(&data.instances[n], &omega, cfg)?;
                trace.fallback_gradients += fallback as usize;
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
            let step = cfg.learning_rate / batch.len() as f64;
            let w: Vec<f64> = omega.omega().iter().zip(&grad).map(|(w, g)| w - step * g).collect();
            if w.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { epoch, what: "weight vector" });
            }
            omega = ClassifierParams::projected(w, cfg.norm_budget)?;
        }
        let tl = train_risk(data, &omega, cfg)?;
        if !tl.is_finite() {
            return Err(Error::Divergence { epoch, what: "training loss" });
        }
        let vl = val_risk(val_data, &omega, cfg)?;
        if !vl.is_finite() {
            return Err(Error::Divergence { epoch, what: "validation loss" });
        }
        trace.train_loss.push(tl);
        trace.val_loss.push(vl);
    }
    trace.omega = omega;
    Ok(trace)
}

fn instance_gradient(
    inst: &GameInstance,
    omega: &ClassifierParams,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, bool)> {
    match cfg.mode {
        Mode::Truthful => Ok((truthful_loss_gradient(inst, omega, cfg.loss), false)),
        Mode::Strategic => {
            let g = loss_gradient(inst, omega, cfg.loss, &cfg.solver)?;
            Ok((g.gradient, g.fallback))
        }
        Mode::CostOnly => {
            let g = loss_gradient(&inst.without_externality(), omega, cfg.loss, &cfg.solver)?;
            Ok((g.gradient, g.fallback))
        }
    }
}

fn train_risk(data: &Dataset, omega: &ClassifierParams, cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for inst in &data.instances {
        total += match cfg.mode {
            Mode::Truthful => truthful_loss(inst, omega, cfg.loss),
            Mode::Strategic => per_sample_loss(inst, omega, cfg.loss, &cfg.solver)?,
            Mode::CostOnly => {
                per_sample_loss(&inst.without_externality(), omega, cfg.loss, &cfg.solver)?
            }
        };
    }
    Ok(total / data.len() as f64)
}

fn val_risk(data: &Dataset, omega: &ClassifierParams, cfg: &TrainConfig) -> Result<f64> {
    super::empirical_risk(data, omega, cfg.loss, &cfg.solver)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{CostModel, Externality, GainFunction};
    use crate::learning::{GameTemplate, PopulationModel};

    fn data(n: usize, seed: u64) -> Dataset {
        let pop =
            PopulationModel::new(vec![0.7, 0.3], vec![0.3, 0.7], 0.15, 0.5, vec![0.0, 0.5, 0.5])
                .unwrap();
        let template = GameTemplate {
            cost: CostModel::new(1.0).unwrap(),
            externality: Externality::Proportional,
            beta: 0.5,
            gain: GainFunction::default(),
        };
        Dataset::generate(&pop, &template, n, seed).unwrap()
    }

    fn cfg(mode: Mode, lr: f64) -> TrainConfig {
        TrainConfig {
            epochs: 4,
            batch_size: 5,
            learning_rate: lr,
            norm_budget: 2.0,
            loss: LossFunction::Logistic,
            solver: SolverConfig::default(),
            mode,
            seed: 11,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_initial_loss() {
        let (tr, va) = (data(20, 1), data(10, 2));
        let t = train(&tr, &va, &cfg(Mode::Strategic, 0.0)).unwrap();
        assert_eq!(t.train_loss.len(), 4);
        assert!(t.train_loss.iter().all(|&l| l == t.initial_train_loss));
        assert!(t.val_loss.iter().all(|&l| l == t.initial_val_loss));
    }

    #[test]
    fn strategic_training_reduces_loss_and_respects_budget() {
        let (tr, va) = (data(30, 3), data(10, 4));
        for mode in Mode::ALL {
            let t = train(&tr, &va, &cfg(mode, 2.0)).unwrap();
            assert!(t.omega.omega().iter().map(|w| w * w).sum::<f64>().sqrt() <= 2.0 + 1e-12);
            assert!(t.train_loss.last().unwrap() < &t.initial_train_loss, "{mode:?}");
        }
    }

    #[test]
    fn deterministic() {
        let (tr, va) = (data(15, 5), data(5, 6));
        let a = train(&tr, &va, &cfg(Mode::CostOnly, 1.0)).unwrap();
        let b = train(&tr, &va, &cfg(Mode::CostOnly, 1.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in Mode::ALL {
            assert_eq!(Mode::parse(m.name()), Some(m));
        }
    }
}
