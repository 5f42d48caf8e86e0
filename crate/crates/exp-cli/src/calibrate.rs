//! Scenario calibration: find the demand multiplier that induces a target
//! spill-over rate under the fixed hold-everything policy. The measured
//! rate is monotone in demand, so a plain bisection over the multiplier
//! converges quickly.

use corridor_core::sim::CorridorConfig;
use corridor_core::trainer::{measure_spillover_rate, TrainError};
use corridor_core::ExecMode;
use std::fmt;

pub const MULTIPLIER_LO: f64 = 0.1;
pub const MULTIPLIER_HI: f64 = 10.0;
pub const RATE_TOLERANCE: f64 = 0.05;
pub const MAX_ITERATIONS: usize = 30;
/// Hold-policy episodes measured per probe, seeded from the first plan seed.
pub const CALIBRATION_EPISODES: usize = 20;

#[derive(Debug)]
pub enum CalibrationError {
    /// No multiplier in the search bounds reaches the target rate.
    Unreachable {
        target: f64,
        rate_at_lo: f64,
        rate_at_hi: f64,
    },
    Train(TrainError),
}

impl fmt::Display for CalibrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibrationError::Unreachable {
                target,
                rate_at_lo,
                rate_at_hi,
            } => write!(
                f,
                "target spill-over rate {target} is unreachable: multipliers {MULTIPLIER_LO}..{MULTIPLIER_HI} \
                 achieve rates {rate_at_lo}..{rate_at_hi}"
            ),
            CalibrationError::Train(e) => write!(f, "calibration rollout failed: {e}"),
        }
    }
}

impl std::error::Error for CalibrationError {}

impl From<TrainError> for CalibrationError {
    fn from(e: TrainError) -> Self {
        CalibrationError::Train(e)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Calibration {
    pub target_rate: f64,
    pub multiplier: f64,
    pub achieved_rate: f64,
    pub iterations: usize,
    /// Achieved within ±RATE_TOLERANCE of the target.
    pub converged: bool,
}

/// Bisection over the demand multiplier until the mean measured rate over
/// `CALIBRATION_EPISODES` seed-varied hold-policy episodes lands within
/// ±`RATE_TOLERANCE` of the target.
pub fn calibrate_scenario(
    target_rate: f64,
    corridor: &CorridorConfig,
    horizon: usize,
    base_seed: u64,
    mode: ExecMode,
) -> Result<Calibration, CalibrationError> {
    let seeds: Vec<u64> = (0..CALIBRATION_EPISODES as u64)
        .map(|k| base_seed.wrapping_mul(1_000_003).wrapping_add(k))
        .collect();
    let measure = |multiplier: f64| -> Result<f64, CalibrationError> {
        let probe = CorridorConfig {
            demand_multiplier: multiplier,
            ..corridor.clone()
        };
        Ok(measure_spillover_rate(&probe, horizon, &seeds, mode)?)
    };

    let mut lo = MULTIPLIER_LO;
    let mut hi = MULTIPLIER_HI;
    let rate_at_lo = measure(lo)?;
    if (rate_at_lo - target_rate).abs() <= RATE_TOLERANCE {
        return Ok(Calibration {
            target_rate,
            multiplier: lo,
            achieved_rate: rate_at_lo,
            iterations: 0,
            converged: true,
        });
    }
    let rate_at_hi = measure(hi)?;
    if (rate_at_hi - target_rate).abs() <= RATE_TOLERANCE {
        return Ok(Calibration {
            target_rate,
            multiplier: hi,
            achieved_rate: rate_at_hi,
            iterations: 0,
            converged: true,
        });
    }
    if target_rate < rate_at_lo - RATE_TOLERANCE || target_rate > rate_at_hi + RATE_TOLERANCE {
        return Err(CalibrationError::Unreachable {
            target: target_rate,
            rate_at_lo,
            rate_at_hi,
        });
    }

    let mut best = (lo, rate_at_lo);
    for iteration in 1..=MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let rate = measure(mid)?;
        if (rate - target_rate).abs() < (best.1 - target_rate).abs() {
            best = (mid, rate);
        }
        if (rate - target_rate).abs() <= RATE_TOLERANCE {
            return Ok(Calibration {
                target_rate,
                multiplier: mid,
                achieved_rate: rate,
                iterations: iteration,
                converged: true,
            });
        }
        if rate < target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Calibration {
        target_rate,
        multiplier: best.0,
        achieved_rate: best.1,
        iterations: MAX_ITERATIONS,
        converged: false,
    })
}
