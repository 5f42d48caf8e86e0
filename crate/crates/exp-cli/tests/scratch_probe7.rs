//! Temporary directional-comparison probes (run explicitly).

use corridor_core::sim::CorridorConfig;
use corridor_core::trainer::{
    measure_spillover_rate, train, AlgorithmKind, TrainConfig, TrainHooks,
};
use corridor_core::ExecMode;

fn corridor7(cells: f64, arr: f64, cross: f64) -> CorridorConfig {
    CorridorConfig {
        n_intersections: 2,
        link_length: 7.5 * cells,
        arrival_rate: arr,
        cross_arrival_rate: Some(cross),
        we_arrival_rate: Some(0.0),
        yellow_duration: 5,
        min_green: 5,
        max_green: 60,
        ..CorridorConfig::default()
    }
}

fn train7(seed: u64, zero_init: bool) -> TrainConfig {
    TrainConfig {
        episodes: 400,
        horizon: 120,
        hidden_layers: 2,
        hidden_per_agent: 16,
        buffer_capacity: 2000,
        batch_size: 64,
        update_frequency: 4,
        updates_per_trigger: 1,
        target_sync_period: 200,
        learning_rate: 2e-4,
        gamma: 0.9,
        epsilon_end: 0.0,
        zero_off_diagonal_init: zero_init,
        seed,
        ..TrainConfig::default()
    }
}

fn calibrate_half(corridor: &CorridorConfig) -> (f64, f64) {
    let seeds: Vec<u64> = (0..20).collect();
    let measure = |m: f64| {
        let probe = CorridorConfig {
            demand_multiplier: m,
            ..corridor.clone()
        };
        measure_spillover_rate(&probe, 120, &seeds, ExecMode::default()).unwrap()
    };
    let (mut lo, mut hi) = (0.1, 10.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        let rate = measure(mid);
        if (rate - 0.5).abs() <= 0.05 {
            return (mid, rate);
        }
        if rate < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi), measure(0.5 * (lo + hi)))
}

fn run_cell(kind: AlgorithmKind, scenario: &CorridorConfig, seed: u64, zero_init: bool) -> f64 {
    let config = train7(seed, zero_init);
    let out = train(kind, &config, scenario, &TrainHooks::default(), ExecMode::Sequential).unwrap();
    let tail = &out.metrics[out.metrics.len() - 100..];
    tail.iter().map(|m| m.team_reward).sum::<f64>() / tail.len() as f64
}

fn probe(name: &str, corridor: &CorridorConfig, zero_init: bool, include_cen: bool) {
    let (multiplier, rate) = calibrate_half(corridor);
    let scenario = CorridorConfig {
        demand_multiplier: multiplier,
        ..corridor.clone()
    };
    println!("{name}: multiplier {multiplier:.3} rate {rate:.3}");
    let mut kinds = vec![AlgorithmKind::Dpus, AlgorithmKind::InDqn];
    if include_cen {
        kinds.push(AlgorithmKind::CenDqn);
    }
    let cells: Vec<(AlgorithmKind, u64)> = kinds
        .iter()
        .flat_map(|&k| (0u64..5).map(move |s| (k, s)))
        .collect();
    use rayon::prelude::*;
    let results: Vec<(AlgorithmKind, u64, f64)> = cells
        .par_iter()
        .map(|&(k, s)| (k, s, run_cell(k, &scenario, s, zero_init)))
        .collect();
    let get = |k: AlgorithmKind, s: u64| {
        results
            .iter()
            .find(|(rk, rs, _)| *rk == k && *rs == s)
            .unwrap()
            .2
    };
    let mut wins = 0;
    for s in 0..5 {
        let d = get(AlgorithmKind::Dpus, s);
        let i = get(AlgorithmKind::InDqn, s);
        if d >= i {
            wins += 1;
        }
        if include_cen {
            let c = get(AlgorithmKind::CenDqn, s);
            println!("  seed {s}: dpus {d:8.1} in {i:8.1} cen {c:8.1}  {}", if d >= i { "D" } else { "-" });
        } else {
            println!("  seed {s}: dpus {d:8.1} in {i:8.1}  {}", if d >= i { "D" } else { "-" });
        }
    }
    println!("{name}: dpus wins {wins}/5");
}

#[test]
#[ignore]
fn probe_criterion_7() {
    probe(
        "oneway g60 .2/.1 ",
        &corridor7(8.0, 0.2, 0.1),
        true,
        true,
    );
    probe(
        "oneway g20 .2/.1 ",
        &CorridorConfig { max_green: 20, ..corridor7(8.0, 0.2, 0.1) },
        true,
        true,
    );
}
