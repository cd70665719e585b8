//! Experiment harness around `stratext-core`: configuration files, dataset
//! generation per seed, multi-mode training over ablation grids, CSV output
//! and the invariant suites behind `stratext check`.

pub mod checks;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod output;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentOutput};
