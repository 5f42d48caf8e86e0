//! The experiment sweep: every (algorithm, scenario, seed) cell trains
//! independently, writes its own metrics file and final checkpoint, and the
//! coordinator writes one summary at the end. Cells run across a worker
//! pool when the `parallel` feature is on; outputs are identical either
//! way because every cell owns its state and generators.

use crate::calibrate::{calibrate_scenario, Calibration, CalibrationError};
use crate::config::{LoadedConfig, OnExisting};
use crate::metrics::{mean_last, mean_rate, metrics_csv, write_atomic};
use corridor_core::qfunction::save_checkpoint;
use corridor_core::sim::CorridorConfig;
use corridor_core::trainer::{train, AlgorithmKind, TrainConfig, TrainHooks};
use corridor_core::ExecMode;
use std::path::{Path, PathBuf};

pub const SUMMARY_HEADER: &str =
    "algorithm,target_rate,multiplier,seed,episodes,mean_team_reward_last_100,mean_measured_rate,status";
pub const SUMMARY_WINDOW: usize = 100;

#[derive(Debug, Clone)]
pub struct Cell {
    pub algorithm: AlgorithmKind,
    pub target_rate: f64,
    pub multiplier: f64,
    pub seed: u64,
}

impl Cell {
    pub fn stem(&self) -> String {
        format!(
            "{}_rate{}_seed{}",
            self.algorithm.name(),
            self.target_rate,
            self.seed
        )
    }

    pub fn metrics_path(&self, out_dir: &Path) -> PathBuf {
        out_dir.join("metrics").join(format!("{}.csv", self.stem()))
    }

    pub fn checkpoint_path(&self, out_dir: &Path) -> PathBuf {
        out_dir
            .join("checkpoints")
            .join(format!("{}.ckpt.json", self.stem()))
    }
}

#[derive(Debug)]
pub struct CellOutcome {
    pub cell: Cell,
    pub episodes: usize,
    pub mean_team_reward_last_100: f64,
    pub mean_measured_rate: f64,
    pub status: String,
}

/// Calibrates (or adopts) the demand multiplier for every target rate.
pub fn resolve_scenarios(
    config: &LoadedConfig,
    mode: ExecMode,
) -> Result<Vec<Calibration>, CalibrationError> {
    match &config.plan.multipliers {
        Some(multipliers) => Ok(config
            .plan
            .target_rates
            .iter()
            .zip(multipliers)
            .map(|(&target_rate, &multiplier)| Calibration {
                target_rate,
                multiplier,
                achieved_rate: target_rate,
                iterations: 0,
                converged: true,
            })
            .collect()),
        None => config
            .plan
            .target_rates
            .iter()
            .map(|&rate| {
                calibrate_scenario(
                    rate,
                    &config.corridor,
                    config.train.horizon,
                    config.plan.seeds[0],
                    mode,
                )
            })
            .collect(),
    }
}

pub fn plan_cells(config: &LoadedConfig, scenarios: &[Calibration]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &algorithm in &config.plan.algorithms {
        for scenario in scenarios {
            for &seed in &config.plan.seeds {
                cells.push(Cell {
                    algorithm,
                    target_rate: scenario.target_rate,
                    multiplier: scenario.multiplier,
                    seed,
                });
            }
        }
    }
    cells
}

/// Trains one cell and writes its metrics file and checkpoint atomically.
pub fn run_cell(
    cell: &Cell,
    config: &LoadedConfig,
    out_dir: &Path,
    mode: ExecMode,
) -> std::io::Result<CellOutcome> {
    let metrics_path = cell.metrics_path(out_dir);
    let checkpoint_path = cell.checkpoint_path(out_dir);
    if config.plan.on_existing == OnExisting::Skip
        && metrics_path.exists()
        && checkpoint_path.exists()
    {
        eprintln!("cell {} already complete, skipping (on_existing = skip)", cell.stem());
        return Ok(CellOutcome {
            cell: cell.clone(),
            episodes: 0,
            mean_team_reward_last_100: f64::NAN,
            mean_measured_rate: f64::NAN,
            status: "skipped".into(),
        });
    }

    let corridor = CorridorConfig {
        demand_multiplier: cell.multiplier,
        ..config.corridor.clone()
    };
    let train_config = TrainConfig {
        seed: cell.seed,
        ..config.train.clone()
    };
    match train(
        cell.algorithm,
        &train_config,
        &corridor,
        &TrainHooks::default(),
        mode,
    ) {
        Ok(output) => {
            let csv = metrics_csv(
                cell.algorithm.name(),
                cell.target_rate,
                cell.seed,
                &output.metrics,
                config.plan.record_timing,
            );
            write_atomic(&metrics_path, &csv)?;
            let params: Vec<_> = output.nets.iter().map(|n| n.online.clone()).collect();
            if let Some(dir) = checkpoint_path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            save_checkpoint(&checkpoint_path, cell.algorithm.name(), &params)
                .map_err(|e| std::io::Error::other(e.to_string()))?;
            Ok(CellOutcome {
                cell: cell.clone(),
                episodes: output.metrics.len(),
                mean_team_reward_last_100: mean_last(&output.metrics, SUMMARY_WINDOW),
                mean_measured_rate: mean_rate(&output.metrics),
                status: "ok".into(),
            })
        }
        Err(err) => Ok(CellOutcome {
            cell: cell.clone(),
            episodes: 0,
            mean_team_reward_last_100: f64::NAN,
            mean_measured_rate: f64::NAN,
            status: format!("aborted: {err}").replace(',', ";"),
        }),
    }
}

/// Runs the whole plan and writes `summary.csv`. Returns the outcomes in
/// cell order.
pub fn run_sweep(
    config: &LoadedConfig,
    out_dir: &Path,
    mode: ExecMode,
) -> anyhow::Result<Vec<CellOutcome>> {
    let scenarios = resolve_scenarios(config, mode)?;
    for s in &scenarios {
        eprintln!(
            "scenario rate {}: multiplier {} (achieved {}, {} iterations{})",
            s.target_rate,
            s.multiplier,
            s.achieved_rate,
            s.iterations,
            if s.converged { "" } else { ", NOT converged" }
        );
    }
    let cells = plan_cells(config, &scenarios);
    let run = |cell: &Cell| run_cell(cell, config, out_dir, mode);
    let outcomes: Vec<CellOutcome> = match mode {
        ExecMode::Sequential => cells.iter().map(run).collect::<Result<_, _>>()?,
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            cells.par_iter().map(run).collect::<Result<_, _>>()?
        }
    };

    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for o in &outcomes {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            o.cell.algorithm.name(),
            o.cell.target_rate,
            o.cell.multiplier,
            o.cell.seed,
            o.episodes,
            o.mean_team_reward_last_100,
            o.mean_measured_rate,
            o.status
        ));
    }
    write_atomic(&out_dir.join("summary.csv"), &summary)?;
    Ok(outcomes)
}
