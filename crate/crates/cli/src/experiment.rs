//! Training every mode over seeds and an ablation grid.

use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use stratext_core::learning::{train, Dataset, Mode, TrainTrace};

use crate::config::ExperimentConfig;
use crate::output::{render_records, render_summary, CsvRecord, Interval, SummaryRow};

/// One point of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// Fixed number of agents, or `None` to sample it from `k_weights`.
    pub k: Option<usize>,
    pub alpha: f64,
    pub beta: f64,
}

/// A (cell, seed, mode) run that errored; its whole cell is left out.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub cell: Cell,
    pub seed: u64,
    pub mode: Mode,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<CsvRecord>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<Failure>,
}

impl ExperimentOutput {
    pub fn records_csv(&self) -> String {
        render_records(&self.records)
    }

    pub fn summary_csv(&self) -> String {
        render_summary(&self.summary)
    }

    /// Writes `<experiment>.csv` and `<experiment>_summary.csv` under the
    /// configured output directory and returns both paths.
    pub fn write(&self, cfg: &ExperimentConfig) -> std::io::Result<[PathBuf; 2]> {
        std::fs::create_dir_all(&cfg.output_dir)?;
        let records = cfg.output_dir.join(format!("{}.csv", cfg.experiment));
        let summary = cfg.output_dir.join(format!("{}_summary.csv", cfg.experiment));
        std::fs::write(&records, self.records_csv())?;
        std::fs::write(&summary, self.summary_csv())?;
        Ok([records, summary])
    }
}

/// Cartesian product of the k, alpha and beta grids; an empty grid
/// contributes the base value.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let ks: Vec<Option<usize>> =
        if cfg.grid_k.is_empty() { vec![None] } else { cfg.grid_k.iter().map(|&k| Some(k)).collect() };
    let alphas = if cfg.grid_alpha.is_empty() { vec![cfg.alpha] } else { cfg.grid_alpha.clone() };
    let betas = if cfg.grid_beta.is_empty() { vec![cfg.beta] } else { cfg.grid_beta.clone() };
    let mut out = Vec::with_capacity(ks.len() * alphas.len() * betas.len());
    for &k in &ks {
        for &alpha in &alphas {
            for &beta in &betas {
                out.push(Cell { k, alpha, beta });
            }
        }
    }
    out
}

/// Training and validation data of one seed. The features depend on the
/// seed and the participant distribution only, so cells that differ in alpha
/// or beta see the same agents.
pub fn datasets(cfg: &ExperimentConfig, cell: Cell, seed: u64) -> stratext_core::Result<(Dataset, Dataset)> {
    let weights = match cell.k {
        Some(k) => {
            let mut w = vec![0.0; k];
            w[k - 1] = 1.0;
            w
        }
        None => cfg.k_weights.clone(),
    };
    let pop = cfg.population_with(&weights);
    let template = cfg.template_with(cell.alpha, cell.beta);
    let mut streams = ChaCha8Rng::seed_from_u64(seed);
    let (train_seed, val_seed) = (streams.next_u64(), streams.next_u64());
    Ok((
        Dataset::generate(&pop, &template, cfg.n_train, train_seed)?,
        Dataset::generate(&pop, &template, cfg.n_val, val_seed)?,
    ))
}

fn run_job(cfg: &ExperimentConfig, cell: Cell, seed: u64) -> Result<Vec<(Mode, TrainTrace)>, Failure> {
    let fail = |mode: Mode, e: stratext_core::Error| Failure { cell, seed, mode, error: e.to_string() };
    let (tr, va) = datasets(cfg, cell, seed).map_err(|e| fail(cfg.modes[0], e))?;
    cfg.modes
        .iter()
        .map(|&mode| {
            train(&tr, &va, &cfg.train_config(mode, seed)).map(|t| (mode, t)).map_err(|e| fail(mode, e))
        })
        .collect()
}

/// Runs every (cell, seed) pair, possibly in parallel, and merges the results
/// in (cell, seed, mode, epoch) order so the output does not depend on
/// scheduling.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput, String> {
    cfg.validate().map_err(|e| e.to_string())?;
    let grid = cells(cfg);
    let jobs: Vec<(usize, u64)> =
        (0..grid.len()).flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| format!("cannot start worker threads: {e}"))?;
    let results: Vec<_> =
        pool.install(|| jobs.par_iter().map(|&(c, s)| run_job(cfg, grid[c], s)).collect());

    let mut out = ExperimentOutput { records: vec![], summary: vec![], failures: vec![] };
    let per_cell = cfg.seeds.len();
    for (c, cell) in grid.iter().enumerate() {
        let runs = &results[c * per_cell..(c + 1) * per_cell];
        let failures: Vec<Failure> = runs.iter().filter_map(|r| r.as_ref().err().cloned()).collect();
        if !failures.is_empty() {
            out.failures.extend(failures);
            continue;
        }
        let k = cell.k.unwrap_or(cfg.k_weights.len());
        for (run, &seed) in runs.iter().zip(&cfg.seeds) {
            for (mode, trace) in run.as_ref().expect("failures filtered") {
                for epoch in 0..cfg.epochs {
                    out.records.push(CsvRecord {
                        experiment: cfg.experiment.clone(),
                        mode: *mode,
                        seed,
                        epoch: epoch + 1,
                        k,
                        alpha: cell.alpha,
                        beta: cell.beta,
                        train_loss: trace.train_loss[epoch],
                        val_loss: trace.val_loss[epoch],
                    });
                }
            }
        }
        for (m, &mode) in cfg.modes.iter().enumerate() {
            for epoch in 0..cfg.epochs {
                let pick = |f: fn(&TrainTrace) -> &Vec<f64>| -> Vec<f64> {
                    runs.iter().map(|r| f(&r.as_ref().unwrap()[m].1)[epoch]).collect()
                };
                out.summary.push(SummaryRow {
                    experiment: cfg.experiment.clone(),
                    mode,
                    epoch: epoch + 1,
                    k,
                    alpha: cell.alpha,
                    beta: cell.beta,
                    seeds: per_cell,
                    train: Interval::of(&pick(|t| &t.train_loss)),
                    val: Interval::of(&pick(|t| &t.val_loss)),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in [("epochs", "1"), ("seeds", "3"), ("n_train", "6"), ("n_val", "4"), ("batch_size", "3")] {
            cfg.set(k, v).unwrap();
        }
        cfg
    }

    #[test]
    fn one_record_per_mode_for_a_single_run() {
        let out = run_experiment(&small()).unwrap();
        assert_eq!(out.records.len(), 3);
        let modes: Vec<_> = out.records.iter().map(|r| r.mode).collect();
        assert_eq!(modes, Mode::ALL.to_vec());
        assert_eq!(out.summary.len(), 3);
        assert!(out.failures.is_empty());
    }

    #[test]
    fn grid_is_a_cartesian_product() {
        let mut cfg = small();
        cfg.set("grid_k", "2,3").unwrap();
        cfg.set("grid_beta", "0,0.5,1").unwrap();
        let grid = cells(&cfg);
        assert_eq!(grid.len(), 6);
        assert_eq!(grid[4], Cell { k: Some(3), alpha: 1.0, beta: 0.5 });
    }

    #[test]
    fn failed_cells_are_skipped() {
        let mut cfg = small();
        // far past the concavity limit the potential has several maximisers
        for (k, v) in [("externality", "proportional"), ("alpha", "0.1"), ("norm_budget", "10"), ("learning_rate", "5")] {
            cfg.set(k, v).unwrap();
        }
        cfg.set("grid_beta", "0.05,3").unwrap();
        let out = run_experiment(&cfg).unwrap();
        assert!(!out.failures.is_empty());
        assert!(out.failures.iter().all(|f| f.cell.beta == 3.0));
        assert_eq!(out.records.len(), 3);
        assert!(out.records.iter().all(|r| r.beta == 0.05));
    }
}
