//! Flat `key = value` configuration files with `[corridor]`, `[train]` and
//! `[plan]` sections. Unknown keys are hard errors with a nearest-key
//! suggestion, so typos cannot silently fall back to defaults.

use corridor_core::sim::CorridorConfig;
use corridor_core::trainer::{AlgorithmKind, TrainConfig};
use std::fmt;
use std::path::Path;

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse { line: usize, message: String },
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read configuration: {e}"),
            ConfigError::Parse { line, message } => write!(f, "line {line}: {message}"),
            ConfigError::Invalid(message) => write!(f, "invalid configuration: {message}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// What `sweep` does when a cell's outputs already exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnExisting {
    Skip,
    Overwrite,
}

/// Sweep plan: scenarios, algorithms, seeds, output behavior.
#[derive(Debug, Clone)]
pub struct PlanConfig {
    pub target_rates: Vec<f64>,
    /// Pre-calibrated demand multipliers, parallel to `target_rates`; when
    /// absent the sweep calibrates each scenario first.
    pub multipliers: Option<Vec<f64>>,
    pub algorithms: Vec<AlgorithmKind>,
    pub seeds: Vec<u64>,
    /// Record wall-clock seconds into metrics rows. Disabled, the column is
    /// written as 0 so reruns are byte-identical.
    pub record_timing: bool,
    pub on_existing: OnExisting,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            target_rates: vec![0.0, 0.1, 0.3, 0.5],
            multipliers: None,
            algorithms: AlgorithmKind::ALL.to_vec(),
            seeds: vec![0],
            record_timing: true,
            on_existing: OnExisting::Skip,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub corridor: CorridorConfig,
    pub train: TrainConfig,
    pub plan: PlanConfig,
}

// Keys per section, used for validation and suggestions.
const CORRIDOR_KEYS: &[&str] = &[
    "n_intersections",
    "link_length",
    "cell_length",
    "lanes_per_approach",
    "arrival_rate",
    "cross_arrival_rate",
    "we_arrival_rate",
    "demand_multiplier",
    "yellow_duration",
    "min_green",
    "max_green",
    "decision_interval",
    "sim_step",
    "threshold_cells",
];

const TRAIN_KEYS: &[&str] = &[
    "gamma",
    "learning_rate",
    "epsilon_start",
    "epsilon_end",
    "epsilon_decay_fraction",
    "buffer_capacity",
    "batch_size",
    "update_frequency",
    "target_sync_period",
    "updates_per_trigger",
    "episodes",
    "horizon",
    "seed",
    "hidden_layers",
    "hidden_per_agent",
    "priority_exponent",
    "priority_floor",
    "grad_clip_norm",
];

const PLAN_KEYS: &[&str] = &[
    "target_rates",
    "multipliers",
    "algorithms",
    "seeds",
    "record_timing",
    "on_existing",
];

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<LoadedConfig, ConfigError> {
    let mut config = LoadedConfig::default();
    let mut section: Option<String> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or_else(|| ConfigError::Parse {
                line: line_no,
                message: format!("malformed section header '{line}'"),
            })?;
            match name {
                "corridor" | "train" | "plan" => section = Some(name.to_string()),
                other => {
                    return Err(ConfigError::Parse {
                        line: line_no,
                        message: format!(
                            "unknown section '[{other}]'; expected [corridor], [train] or [plan]"
                        ),
                    })
                }
            }
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
            line: line_no,
            message: format!("expected 'key = value', got '{line}'"),
        })?;
        let key = key.trim();
        let value = value.trim();
        let section = section.as_deref().ok_or_else(|| ConfigError::Parse {
            line: line_no,
            message: format!("key '{key}' appears before any [section] header"),
        })?;
        match section {
            "corridor" => set_corridor_key(&mut config.corridor, key, value, line_no)?,
            "train" => set_train_key(&mut config.train, key, value, line_no)?,
            "plan" => set_plan_key(&mut config.plan, key, value, line_no)?,
            _ => unreachable!(),
        }
    }

    validate(&config)?;
    Ok(config)
}

fn validate(config: &LoadedConfig) -> Result<(), ConfigError> {
    config
        .corridor
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    config
        .train
        .validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let plan = &config.plan;
    if plan.target_rates.is_empty() {
        return Err(ConfigError::Invalid("target_rates must not be empty".into()));
    }
    if plan.target_rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(ConfigError::Invalid(
            "target_rates entries must lie in [0, 1]".into(),
        ));
    }
    if let Some(multipliers) = &plan.multipliers {
        if multipliers.len() != plan.target_rates.len() {
            return Err(ConfigError::Invalid(format!(
                "multipliers has {} entries but target_rates has {}",
                multipliers.len(),
                plan.target_rates.len()
            )));
        }
        if multipliers.iter().any(|m| *m <= 0.0) {
            return Err(ConfigError::Invalid("multipliers must be positive".into()));
        }
    }
    if plan.algorithms.is_empty() {
        return Err(ConfigError::Invalid("algorithms must not be empty".into()));
    }
    if plan.seeds.is_empty() {
        return Err(ConfigError::Invalid("seeds must not be empty".into()));
    }
    Ok(())
}

fn unknown_key(section: &str, key: &str, known: &[&str], line: usize) -> ConfigError {
    let suggestion = known
        .iter()
        .map(|k| (edit_distance(key, k), *k))
        .min()
        .filter(|(d, _)| *d <= 3)
        .map(|(_, k)| format!("; did you mean '{k}'?"))
        .unwrap_or_default();
    ConfigError::Parse {
        line,
        message: format!("unknown key '{key}' in [{section}]{suggestion}"),
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Parse {
        line,
        message: format!(
            "cannot parse value '{value}' for key '{key}' as {}",
            std::any::type_name::<T>()
        ),
    })
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<Vec<T>, ConfigError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse_value(key, v, line))
        .collect()
}

fn set_corridor_key(
    corridor: &mut CorridorConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    match key {
        "n_intersections" => corridor.n_intersections = parse_value(key, value, line)?,
        "link_length" => corridor.link_length = parse_value(key, value, line)?,
        "cell_length" => corridor.cell_length = parse_value(key, value, line)?,
        "lanes_per_approach" => corridor.lanes_per_approach = parse_value(key, value, line)?,
        "arrival_rate" => corridor.arrival_rate = parse_value(key, value, line)?,
        "cross_arrival_rate" => corridor.cross_arrival_rate = Some(parse_value(key, value, line)?),
        "we_arrival_rate" => corridor.we_arrival_rate = Some(parse_value(key, value, line)?),
        "demand_multiplier" => corridor.demand_multiplier = parse_value(key, value, line)?,
        "yellow_duration" => corridor.yellow_duration = parse_value(key, value, line)?,
        "min_green" => corridor.min_green = parse_value(key, value, line)?,
        "max_green" => corridor.max_green = parse_value(key, value, line)?,
        "decision_interval" => corridor.decision_interval = parse_value(key, value, line)?,
        "sim_step" => corridor.sim_step = parse_value(key, value, line)?,
        "threshold_cells" => corridor.threshold_cells = parse_value(key, value, line)?,
        _ => return Err(unknown_key("corridor", key, CORRIDOR_KEYS, line)),
    }
    Ok(())
}

fn set_train_key(
    train: &mut TrainConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    match key {
        "gamma" => train.gamma = parse_value(key, value, line)?,
        "learning_rate" => train.learning_rate = parse_value(key, value, line)?,
        "epsilon_start" => train.epsilon_start = parse_value(key, value, line)?,
        "epsilon_end" => train.epsilon_end = parse_value(key, value, line)?,
        "epsilon_decay_fraction" => train.epsilon_decay_fraction = parse_value(key, value, line)?,
        "buffer_capacity" => train.buffer_capacity = parse_value(key, value, line)?,
        "batch_size" => train.batch_size = parse_value(key, value, line)?,
        "update_frequency" => train.update_frequency = parse_value(key, value, line)?,
        "target_sync_period" => train.target_sync_period = parse_value(key, value, line)?,
        "updates_per_trigger" => train.updates_per_trigger = parse_value(key, value, line)?,
        "episodes" => train.episodes = parse_value(key, value, line)?,
        "horizon" => train.horizon = parse_value(key, value, line)?,
        "seed" => train.seed = parse_value(key, value, line)?,
        "hidden_layers" => train.hidden_layers = parse_value(key, value, line)?,
        "hidden_per_agent" => train.hidden_per_agent = parse_value(key, value, line)?,
        "priority_exponent" => train.priority_exponent = parse_value(key, value, line)?,
        "priority_floor" => train.priority_floor = parse_value(key, value, line)?,
        "grad_clip_norm" => train.grad_clip_norm = parse_value(key, value, line)?,
        _ => return Err(unknown_key("train", key, TRAIN_KEYS, line)),
    }
    Ok(())
}

fn set_plan_key(
    plan: &mut PlanConfig,
    key: &str,
    value: &str,
    line: usize,
) -> Result<(), ConfigError> {
    match key {
        "target_rates" => plan.target_rates = parse_list(key, value, line)?,
        "multipliers" => plan.multipliers = Some(parse_list(key, value, line)?),
        "seeds" => plan.seeds = parse_list(key, value, line)?,
        "algorithms" => {
            plan.algorithms = value
                .split(',')
                .map(str::trim)
                .filter(|v| !v.is_empty())
                .map(|name| {
                    AlgorithmKind::parse(name).ok_or_else(|| ConfigError::Parse {
                        line,
                        message: format!(
                            "unknown algorithm '{name}'; expected dpus, in_dqn, cen_dqn or co_dqn"
                        ),
                    })
                })
                .collect::<Result<_, _>>()?;
        }
        "record_timing" => plan.record_timing = parse_value(key, value, line)?,
        "on_existing" => {
            plan.on_existing = match value {
                "skip" => OnExisting::Skip,
                "overwrite" => OnExisting::Overwrite,
                other => {
                    return Err(ConfigError::Parse {
                        line,
                        message: format!("on_existing must be 'skip' or 'overwrite', got '{other}'"),
                    })
                }
            };
        }
        _ => return Err(unknown_key("plan", key, PLAN_KEYS, line)),
    }
    Ok(())
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut current = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        current[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let substitution = prev[j] + usize::from(ca != cb);
            current[j + 1] = substitution.min(prev[j + 1] + 1).min(current[j] + 1);
        }
        std::mem::swap(&mut prev, &mut current);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_all_defaults() {
        let config = parse_config("").unwrap();
        assert_eq!(config.corridor.n_intersections, 2);
        assert_eq!(config.corridor.link_length, 300.0);
        assert_eq!(config.train.gamma, 0.95);
        assert_eq!(config.train.episodes, 800);
        assert_eq!(config.plan.target_rates, vec![0.0, 0.1, 0.3, 0.5]);
        assert_eq!(config.plan.algorithms.len(), 4);
        assert_eq!(config.plan.seeds, vec![0]);
    }

    #[test]
    fn sections_and_values_parse() {
        let text = "\n[corridor]\nn_intersections = 2\narrival_rate = 0.25 # comment\n\n[train]\nepisodes = 12\nseed = 7\n\n[plan]\nalgorithms = dpus, in_dqn\nseeds = 1, 2, 3\ntarget_rates = 0, 0.5\nmultipliers = 1.0, 2.5\non_existing = overwrite\nrecord_timing = false\n";
        let config = parse_config(text).unwrap();
        assert_eq!(config.corridor.arrival_rate, 0.25);
        assert_eq!(config.train.episodes, 12);
        assert_eq!(config.train.seed, 7);
        assert_eq!(config.plan.seeds, vec![1, 2, 3]);
        assert_eq!(config.plan.multipliers, Some(vec![1.0, 2.5]));
        assert_eq!(config.plan.on_existing, OnExisting::Overwrite);
        assert!(!config.plan.record_timing);
    }

    #[test]
    fn min_green_above_max_green_names_both_keys() {
        let text = "[corridor]\nmin_green = 70\nmax_green = 60\n";
        let err = parse_config(text).unwrap_err().to_string();
        assert!(err.contains("min_green") && err.contains("max_green"), "{err}");
    }

    #[test]
    fn unknown_key_suggests_the_nearest_one() {
        let text = "[train]\nlearnig_rate = 0.001\n";
        let err = parse_config(text).unwrap_err().to_string();
        assert!(err.contains("unknown key 'learnig_rate'"), "{err}");
        assert!(err.contains("did you mean 'learning_rate'"), "{err}");
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn keys_outside_sections_are_rejected() {
        let err = parse_config("episodes = 3\n").unwrap_err().to_string();
        assert!(err.contains("before any [section]"), "{err}");
    }

    #[test]
    fn bad_values_point_at_the_line() {
        let err = parse_config("[train]\nepisodes = soon\n").unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("'soon'"), "{err}");
    }

    #[test]
    fn mismatched_multiplier_list_is_rejected() {
        let text = "[plan]\ntarget_rates = 0, 0.5\nmultipliers = 1.0\n";
        let err = parse_config(text).unwrap_err().to_string();
        assert!(err.contains("multipliers"), "{err}");
    }

    #[test]
    fn algorithms_are_validated() {
        let err = parse_config("[plan]\nalgorithms = dqn_dpus\n").unwrap_err().to_string();
        assert!(err.contains("unknown algorithm"), "{err}");
    }

    #[test]
    fn edit_distance_is_sane() {
        assert_eq!(edit_distance("abc", "abc"), 0);
        assert_eq!(edit_distance("learnig_rate", "learning_rate"), 1);
        assert_eq!(edit_distance("", "xy"), 2);
    }
}
