//! Experiment harness CLI: fixed-policy rollouts, single training cells,
//! full sweeps, checkpoint evaluation, scenario calibration, and the exact
//! decentralized/centralized equivalence checks.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime abort
//! (training divergence, unreachable calibration target, failed theory
//! check).

mod calibrate;
mod config;
mod metrics;
mod sweep;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use config::LoadedConfig;
use corridor_core::qfunction::load_checkpoint;
use corridor_core::theory::{
    additivity_sweep, canonical_coupled_instance, check_coupling_gap, contraction_check,
    value_iterate, SweepConfig,
};
use corridor_core::trainer::{evaluate, rollout_fixed_policy, AlgorithmKind};
use corridor_core::ExecMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "exp-cli", version, about = "Corridor traffic-control experiment harness")]
struct Cli {
    /// Configuration file (flat key = value with [corridor]/[train]/[plan]
    /// sections); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the [train] seed and collapses the plan's seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for metrics, checkpoints and summaries.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fixed-policy rollout; prints one metrics row per episode.
    Simulate,
    /// Trains one (algorithm, scenario, seed) cell and writes its outputs.
    Train {
        /// One of: dpus, in_dqn, cen_dqn, co_dqn.
        #[arg(long)]
        algorithm: String,
        /// Target spill-over rate; resolved to a multiplier via the plan or
        /// calibration.
        #[arg(long)]
        rate: Option<f64>,
        /// Demand multiplier, bypassing calibration.
        #[arg(long)]
        multiplier: Option<f64>,
    },
    /// Runs the full plan: algorithms x scenarios x seeds.
    Sweep,
    /// Greedy rollouts from a saved checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Exact tabular checks: additive Q on uncoupled factored MDPs, the
    /// coupling gap on the canonical instance, and value-iteration
    /// contraction.
    CheckTheory,
    /// Calibrates demand multipliers for the plan's target rates.
    Calibrate {
        /// Calibrate a single rate instead of every plan rate.
        #[arg(long)]
        rate: Option<f64>,
    },
}

enum AppError {
    Usage(String),
    Runtime(String),
}

impl AppError {
    fn code(&self) -> ExitCode {
        match self {
            AppError::Usage(_) => ExitCode::from(1),
            AppError::Runtime(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            AppError::Usage(m) | AppError::Runtime(m) => m,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) =>
        {
            print!("{err}");
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            eprintln!("{err}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", err.message());
            err.code()
        }
    }
}

fn load(cli_config: &Option<PathBuf>, seed: Option<u64>) -> Result<LoadedConfig, AppError> {
    let mut loaded = match cli_config {
        Some(path) => config::load_config(path).map_err(|e| AppError::Usage(e.to_string()))?,
        None => LoadedConfig::default(),
    };
    if let Some(seed) = seed {
        loaded.train.seed = seed;
        loaded.plan.seeds = vec![seed];
    }
    Ok(loaded)
}

fn run(cli: Cli) -> Result<(), AppError> {
    let mode = ExecMode::default();
    let loaded = load(&cli.config, cli.seed)?;
    match cli.command {
        Command::Simulate => {
            let rows = rollout_fixed_policy(
                &loaded.corridor,
                loaded.train.episodes,
                loaded.train.horizon,
                loaded.train.seed,
            )
            .map_err(|e| AppError::Runtime(e.to_string()))?;
            print!(
                "{}",
                metrics::metrics_csv(
                    "fixed",
                    f64::NAN,
                    loaded.train.seed,
                    &rows,
                    loaded.plan.record_timing
                )
            );
            Ok(())
        }
        Command::Train {
            algorithm,
            rate,
            multiplier,
        } => {
            let kind = AlgorithmKind::parse(&algorithm).ok_or_else(|| {
                AppError::Usage(format!(
                    "unknown algorithm '{algorithm}'; expected dpus, in_dqn, cen_dqn or co_dqn"
                ))
            })?;
            let (target_rate, multiplier) =
                resolve_cell_scenario(&loaded, rate, multiplier, mode)?;
            let cell = sweep::Cell {
                algorithm: kind,
                target_rate,
                multiplier,
                seed: loaded.train.seed,
            };
            let outcome = sweep::run_cell(&cell, &loaded, &cli.out, mode)
                .map_err(|e| AppError::Runtime(e.to_string()))?;
            if outcome.status != "ok" && outcome.status != "skipped" {
                return Err(AppError::Runtime(format!(
                    "cell {} failed: {}",
                    cell.stem(),
                    outcome.status
                )));
            }
            println!(
                "cell {}: {} episodes, mean team reward (last {}) = {}, mean rate = {}",
                cell.stem(),
                outcome.episodes,
                sweep::SUMMARY_WINDOW,
                outcome.mean_team_reward_last_100,
                outcome.mean_measured_rate
            );
            Ok(())
        }
        Command::Sweep => {
            let outcomes = sweep::run_sweep(&loaded, &cli.out, mode)
                .map_err(|e| AppError::Runtime(e.to_string()))?;
            let aborted = outcomes.iter().filter(|o| o.status.starts_with("aborted")).count();
            println!(
                "sweep complete: {} cells, {} aborted; summary at {}",
                outcomes.len(),
                aborted,
                cli.out.join("summary.csv").display()
            );
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            episodes,
        } => {
            let ckpt =
                load_checkpoint(&checkpoint).map_err(|e| AppError::Usage(e.to_string()))?;
            let kind = AlgorithmKind::parse(&ckpt.algorithm).ok_or_else(|| {
                AppError::Usage(format!("checkpoint has unknown algorithm '{}'", ckpt.algorithm))
            })?;
            let nets: Vec<_> = ckpt
                .nets
                .into_iter()
                .map(corridor_core::qfunction::QNetwork::new)
                .collect();
            let rows = evaluate(
                kind,
                &nets,
                &loaded.corridor,
                episodes,
                loaded.train.horizon,
                loaded.train.seed,
            )
            .map_err(|e| AppError::Runtime(e.to_string()))?;
            print!(
                "{}",
                metrics::metrics_csv(
                    kind.name(),
                    f64::NAN,
                    loaded.train.seed,
                    &rows,
                    loaded.plan.record_timing
                )
            );
            Ok(())
        }
        Command::CheckTheory => check_theory(mode),
        Command::Calibrate { rate } => {
            let rates = match rate {
                Some(r) => vec![r],
                None => loaded.plan.target_rates.clone(),
            };
            for target in rates {
                let result = calibrate::calibrate_scenario(
                    target,
                    &loaded.corridor,
                    loaded.train.horizon,
                    loaded.plan.seeds[0],
                    mode,
                )
                .map_err(|e| AppError::Runtime(e.to_string()))?;
                println!(
                    "rate {} -> multiplier {} (achieved {}, {} iterations, converged: {})",
                    result.target_rate,
                    result.multiplier,
                    result.achieved_rate,
                    result.iterations,
                    result.converged
                );
            }
            Ok(())
        }
    }
}

/// Demand multiplier for a single `train` cell: explicit flag first, then a
/// plan scenario with a matching rate, then calibration; with no rate given
/// the corridor's own multiplier applies.
fn resolve_cell_scenario(
    loaded: &LoadedConfig,
    rate: Option<f64>,
    multiplier: Option<f64>,
    mode: ExecMode,
) -> Result<(f64, f64), AppError> {
    match (rate, multiplier) {
        (Some(rate), Some(multiplier)) => Ok((rate, multiplier)),
        (None, multiplier) => Ok((
            0.0,
            multiplier.unwrap_or(loaded.corridor.demand_multiplier),
        )),
        (Some(rate), None) => {
            if let Some(multipliers) = &loaded.plan.multipliers {
                if let Some(pos) = loaded
                    .plan
                    .target_rates
                    .iter()
                    .position(|r| (r - rate).abs() < 1e-12)
                {
                    return Ok((rate, multipliers[pos]));
                }
            }
            let result = calibrate::calibrate_scenario(
                rate,
                &loaded.corridor,
                loaded.train.horizon,
                loaded.plan.seeds[0],
                mode,
            )
            .map_err(|e| AppError::Runtime(e.to_string()))?;
            Ok((rate, result.multiplier))
        }
    }
}

fn check_theory(mode: ExecMode) -> Result<(), AppError> {
    let mut all_pass = true;
    let mut print_check = |name: &str, pass: bool, detail: String| {
        all_pass &= pass;
        println!(
            "{name:<44} {}  {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    };

    let sweep_config = SweepConfig::default();
    let reports = additivity_sweep(&sweep_config, mode)
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    let max_disc = reports
        .iter()
        .map(|r| r.max_discrepancy)
        .fold(0.0_f64, f64::max);
    print_check(
        &format!(
            "additive Q on {} random uncoupled MDPs",
            sweep_config.instances
        ),
        reports.iter().all(|r| r.pass),
        format!("max |Q_cen - (Q_1 + Q_2)| = {max_disc:.3e}"),
    );

    let canonical = canonical_coupled_instance(sweep_config.gamma);
    let gap = check_coupling_gap(&canonical, sweep_config.vi_tolerance)
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    print_check(
        "coupling gap on the canonical instance",
        gap.max_gap > 0.1 && gap.policy_differs,
        format!(
            "gap = {:.4} at joint (s, a) = {:?}; greedy policies differ in {} state(s)",
            gap.max_gap, gap.witness, gap.states_with_policy_difference
        ),
    );

    let vi = value_iterate(&canonical.joint_explicit(), sweep_config.vi_tolerance)
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    let contraction = contraction_check(&vi.deltas, sweep_config.gamma);
    print_check(
        "value-iteration contraction",
        contraction.pass,
        format!(
            "worst sweep-to-sweep delta ratio {:.6} (gamma = {})",
            contraction.worst_ratio, sweep_config.gamma
        ),
    );

    if all_pass {
        Ok(())
    } else {
        Err(AppError::Runtime("theory checks failed".into()))
    }
}
