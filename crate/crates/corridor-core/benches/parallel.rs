//! Sequential vs parallel execution of the data-parallel inner loops:
//! batch gradients, the theory-oracle sweep, and multi-seed calibration
//! rollouts. Both paths produce bit-identical results; these benches show
//! what the `parallel` feature buys on the current machine.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use corridor_core::qfunction::{batch_gradient, BatchSample, BlockParams, QNetwork};
use corridor_core::sim::CorridorConfig;
use corridor_core::theory::{additivity_sweep, SweepConfig};
use corridor_core::trainer::measure_spillover_rate;
use corridor_core::ExecMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn modes() -> Vec<(&'static str, ExecMode)> {
    let mut modes = vec![("seq", ExecMode::Sequential)];
    #[cfg(feature = "parallel")]
    modes.push(("par", ExecMode::Parallel));
    modes
}

fn bench_batch_gradient(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Default-corridor sizing: two agents, 164 inputs each, 64 hidden units
    // per agent per layer.
    let mut params = BlockParams::zeros(&[164, 164], 2, 64, 3);
    params.init_glorot(&mut rng);
    let net = QNetwork::new(params);
    let dim = net.online.input_len();
    let data: Vec<(Vec<f64>, Vec<f64>, Vec<usize>, Vec<f64>)> = (0..64)
        .map(|_| {
            (
                (0..dim).map(|_| f64::from(rng.gen::<bool>())).collect(),
                (0..dim).map(|_| f64::from(rng.gen::<bool>())).collect(),
                vec![rng.gen_range(0..3), rng.gen_range(0..3)],
                vec![rng.gen_range(-5.0..0.0), rng.gen_range(-5.0..0.0)],
            )
        })
        .collect();
    let samples: Vec<BatchSample> = data
        .iter()
        .map(|(obs, next, actions, rewards)| BatchSample {
            obs,
            next_obs: next,
            actions,
            rewards,
            terminal: false,
        })
        .collect();

    let mut group = c.benchmark_group("batch_gradient");
    for (name, mode) in modes() {
        for batch in [32usize, 64] {
            group.bench_with_input(BenchmarkId::new(name, batch), &batch, |b, &batch| {
                b.iter(|| batch_gradient(&net, &samples[..batch], 0.95, mode).unwrap());
            });
        }
    }
    group.finish();
}

fn bench_theory_sweep(c: &mut Criterion) {
    let config = SweepConfig::default();
    let mut group = c.benchmark_group("additivity_sweep_20_mdps");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| additivity_sweep(&config, mode).unwrap());
        });
    }
    group.finish();
}

fn bench_calibration_rollouts(c: &mut Criterion) {
    let corridor = CorridorConfig {
        link_length: 60.0,
        arrival_rate: 0.1,
        demand_multiplier: 3.0,
        ..CorridorConfig::default()
    };
    let seeds: Vec<u64> = (0..20).collect();
    let mut group = c.benchmark_group("spillover_rate_20_rollouts");
    group.sample_size(10);
    for (name, mode) in modes() {
        group.bench_function(name, |b| {
            b.iter(|| measure_spillover_rate(&corridor, 120, &seeds, mode).unwrap());
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_batch_gradient,
    bench_theory_sweep,
    bench_calibration_rollouts
);
criterion_main!(benches);
