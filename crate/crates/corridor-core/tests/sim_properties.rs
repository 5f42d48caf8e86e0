//! Physical invariants of the cell automaton, checked over randomized
//! configurations and scripted scenarios.

use corridor_core::sim::{CorridorConfig, Phase, SimState};
use corridor_core::spillback;
use proptest::prelude::*;

fn config_with(arrival_rate: f64, multiplier: f64, cells: usize) -> CorridorConfig {
    CorridorConfig {
        link_length: 7.5 * cells as f64,
        arrival_rate,
        demand_multiplier: multiplier,
        ..CorridorConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn vehicles_are_conserved_at_every_step(
        seed in 0u64..1000,
        rate in 0.0f64..1.0,
        multiplier in 0.0f64..3.0,
        steps in 1usize..120,
    ) {
        let config = config_with(rate, multiplier, 6);
        let mut state = SimState::new(&config, seed).unwrap();
        for _ in 0..steps {
            state.step(&config);
            prop_assert_eq!(state.injected - state.exited, state.vehicle_count());
        }
    }

    #[test]
    fn identical_seeds_give_identical_trajectories(
        seed in 0u64..1000,
        steps in 1usize..80,
    ) {
        let config = config_with(0.4, 1.5, 6);
        let mut a = SimState::new(&config, seed).unwrap();
        let mut b = SimState::new(&config, seed).unwrap();
        for _ in 0..steps {
            a.step(&config);
            b.step(&config);
        }
        prop_assert_eq!(a, b);
    }

    #[test]
    fn no_overtaking_and_unit_speed_within_a_lane(
        seed in 0u64..1000,
        steps in 1usize..100,
    ) {
        // All signals held red so no lane discharges; vehicles still arrive
        // and close up. Sorted positions must advance by at most one cell
        // with order preserved.
        let mut config = config_with(0.8, 1.0, 8);
        config.yellow_duration = 100_000;
        let mut state = SimState::new(&config, seed).unwrap();
        for inter in &mut state.intersections {
            inter.phase = Phase::YellowToNs;
        }
        let entry = config.cells_per_link() - 1;
        for _ in 0..steps {
            let before: Vec<Vec<usize>> = state
                .lanes
                .iter()
                .map(|l| {
                    (0..l.cells.len()).filter(|&k| l.cells[k]).collect()
                })
                .collect();
            state.step(&config);
            for (lane, old) in state.lanes.iter().zip(before) {
                let mut new: Vec<usize> =
                    (0..lane.cells.len()).filter(|&k| lane.cells[k]).collect();
                if new.len() == old.len() + 1 {
                    // The extra vehicle can only be a fresh arrival.
                    prop_assert_eq!(new.pop(), Some(entry));
                } else {
                    prop_assert_eq!(new.len(), old.len());
                }
                for (n, o) in new.iter().zip(&old) {
                    prop_assert!(*n == *o || *n + 1 == *o, "jump from {} to {}", o, n);
                }
            }
        }
    }

    #[test]
    fn queues_never_shrink_under_all_red(
        seed in 0u64..1000,
        steps in 1usize..100,
    ) {
        let mut config = config_with(0.7, 1.0, 8);
        config.yellow_duration = 100_000;
        let mut state = SimState::new(&config, seed).unwrap();
        for inter in &mut state.intersections {
            inter.phase = Phase::YellowToEw;
        }
        let mut prev = vec![0usize; state.intersections.len()];
        for _ in 0..steps {
            state.step(&config);
            for i in 0..state.intersections.len() {
                let waiting: usize = state.waiting_count(i).unwrap().iter().sum();
                prop_assert!(
                    waiting >= prev[i],
                    "waiting at {} dropped from {} to {}",
                    i,
                    prev[i],
                    waiting
                );
                prev[i] = waiting;
            }
        }
    }
}

#[test]
fn spillback_is_physically_realizable_within_600_steps() {
    // Heavy through demand, upstream green locked on, downstream signal
    // held red: the connecting link must back up to its entry cell.
    let mut config = config_with(1.0, 1.0, 40);
    config.yellow_duration = 100_000;
    let mut state = SimState::new(&config, 11).unwrap();
    state.intersections[0].phase = Phase::EwGreen;
    state.intersections[0].green_target = u32::MAX;
    state.intersections[1].phase = Phase::YellowToNs;
    let link = state.connecting_lanes()[0];
    for step in 0..600 {
        state.step(&config);
        if spillback::detect(&state, link, config.threshold_cells).unwrap() {
            println!("spill-back reached the lane entry after {} steps", step + 1);
            return;
        }
    }
    panic!("no spill-back within 600 steps");
}

#[test]
fn spillback_rate_rises_with_demand() {
    // Calibration precondition: measured spill-over rate is monotone
    // non-decreasing on a coarse multiplier grid.
    let horizon = 120;
    let seeds: Vec<u64> = (0..8).collect();
    let mut last = 0.0;
    for multiplier in [0.5, 1.0, 2.0, 4.0] {
        let config = config_with(0.15, multiplier, 8);
        let rate = corridor_core::trainer::measure_spillover_rate(
            &config,
            horizon,
            &seeds,
            corridor_core::ExecMode::Sequential,
        )
        .unwrap();
        assert!(
            rate >= last - 1e-12,
            "rate fell from {last} to {rate} at multiplier {multiplier}"
        );
        last = rate;
    }
    assert!(last > 0.0, "the probe grid never produced spill-back");
}
