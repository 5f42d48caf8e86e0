//! Metrics CSV output. One file per (algorithm, scenario, seed) cell, UTF-8
//! with LF line endings; floats print in their shortest round-trippable
//! form so files are byte-stable across reruns.

use corridor_core::trainer::EpisodeMetrics;
use std::io::Write;
use std::path::Path;

pub const METRICS_HEADER: &str = "algorithm,target_rate,measured_rate,seed,episode,team_reward,reward_agent_1,reward_agent_2,epsilon,dropped_arrivals,wall_seconds";

pub fn metrics_row(
    algorithm: &str,
    target_rate: f64,
    seed: u64,
    metrics: &EpisodeMetrics,
    record_timing: bool,
) -> String {
    let agent = |i: usize| metrics.per_agent.get(i).copied().unwrap_or(0.0);
    let wall = if record_timing { metrics.wall_seconds } else { 0.0 };
    format!(
        "{algorithm},{target_rate},{},{seed},{},{},{},{},{},{},{wall}",
        metrics.measured_rate,
        metrics.episode,
        metrics.team_reward,
        agent(0),
        agent(1),
        metrics.epsilon,
        metrics.dropped_arrivals,
    )
}

pub fn metrics_csv(
    algorithm: &str,
    target_rate: f64,
    seed: u64,
    rows: &[EpisodeMetrics],
    record_timing: bool,
) -> String {
    let mut out = String::with_capacity(rows.len() * 96 + METRICS_HEADER.len() + 1);
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        out.push_str(&metrics_row(algorithm, target_rate, seed, m, record_timing));
        out.push('\n');
    }
    out
}

/// Writes via a temp file in the same directory plus a rename, so readers
/// never observe a half-written file.
pub fn write_atomic(path: &Path, content: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(content.as_bytes())?;
    tmp.flush()?;
    tmp.persist(path)?;
    Ok(())
}

/// Mean team reward over the trailing `window` episodes (all of them when
/// the run is shorter).
pub fn mean_last(rows: &[EpisodeMetrics], window: usize) -> f64 {
    let tail = &rows[rows.len().saturating_sub(window)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(|m| m.team_reward).sum::<f64>() / tail.len() as f64
}

pub fn mean_rate(rows: &[EpisodeMetrics]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    rows.iter().map(|m| m.measured_rate).sum::<f64>() / rows.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics(episode: usize, team: f64) -> EpisodeMetrics {
        EpisodeMetrics {
            episode,
            team_reward: team,
            per_agent: vec![team / 2.0, team / 2.0],
            measured_rate: 0.25,
            epsilon: 0.5,
            dropped_arrivals: 3,
            wall_seconds: 1.25,
        }
    }

    #[test]
    fn rows_have_one_entry_per_column() {
        let row = metrics_row("dpus", 0.5, 7, &metrics(0, -4.0), true);
        assert_eq!(row.split(',').count(), METRICS_HEADER.split(',').count());
        assert_eq!(row, "dpus,0.5,0.25,7,0,-4,-2,-2,0.5,3,1.25");
    }

    #[test]
    fn timing_off_pins_the_wall_column_to_zero() {
        let row = metrics_row("dpus", 0.5, 7, &metrics(0, -4.0), false);
        assert!(row.ends_with(",0"));
    }

    #[test]
    fn trailing_mean_uses_the_window() {
        let rows: Vec<EpisodeMetrics> = (0..10).map(|k| metrics(k, -(k as f64))).collect();
        assert_eq!(mean_last(&rows, 4), -(6.0 + 7.0 + 8.0 + 9.0) / 4.0);
        assert_eq!(mean_last(&rows, 100), -4.5);
    }
}
