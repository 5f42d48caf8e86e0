//! Cell-based corridor traffic simulator.
//!
//! A linear corridor of signalized intersections. Each approach lane is a
//! row of fixed-length cells holding at most one vehicle; vehicles advance
//! one cell per step toward the stop line (cell 0). A vehicle at the stop
//! line crosses only when its movement has green and the entry cell of the
//! downstream lane is free, which is exactly the mechanism that lets a full
//! downstream link block the upstream intersection.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds added or removed from the commanded green duration per action.
pub const GREEN_ADJUST_SECONDS: u32 = 5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown intersection id {0}")]
    UnknownIntersection(usize),
    #[error("unknown lane id {0}")]
    UnknownLane(usize),
    #[error("action applied off a decision boundary (clock = {clock}s, decision_interval = {interval}s)")]
    OffDecisionBoundary { clock: u64, interval: u32 },
}

/// Phase-duration adjustment chosen by an agent. Index order is the
/// action-space order used everywhere (0 = decrease, 1 = hold, 2 = increase).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Decrease,
    Hold,
    Increase,
}

impl Action {
    pub const COUNT: usize = 3;

    pub fn from_index(index: usize) -> Option<Self> {
        match index {
            0 => Some(Action::Decrease),
            1 => Some(Action::Hold),
            2 => Some(Action::Increase),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Action::Decrease => 0,
            Action::Hold => 1,
            Action::Increase => 2,
        }
    }

    fn delta_seconds(self) -> i64 {
        match self {
            Action::Decrease => -(GREEN_ADJUST_SECONDS as i64),
            Action::Hold => 0,
            Action::Increase => GREEN_ADJUST_SECONDS as i64,
        }
    }
}

/// Traffic movement served by a lane. The enum order fixes the lane ordering
/// inside observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Movement {
    ThroughEw,
    ThroughWe,
    CrossNs,
    CrossSn,
}

impl Movement {
    pub const ALL: [Movement; 4] = [
        Movement::ThroughEw,
        Movement::ThroughWe,
        Movement::CrossNs,
        Movement::CrossSn,
    ];
}

/// Signal phase of one intersection. One-hot encoding follows this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    NsGreen,
    EwGreen,
    YellowToNs,
    YellowToEw,
}

impl Phase {
    pub const COUNT: usize = 4;

    pub fn one_hot_index(self) -> usize {
        match self {
            Phase::NsGreen => 0,
            Phase::EwGreen => 1,
            Phase::YellowToNs => 2,
            Phase::YellowToEw => 3,
        }
    }

    fn serves(self, movement: Movement) -> bool {
        match self {
            Phase::EwGreen => matches!(movement, Movement::ThroughEw | Movement::ThroughWe),
            Phase::NsGreen => matches!(movement, Movement::CrossNs | Movement::CrossSn),
            Phase::YellowToNs | Phase::YellowToEw => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneUpstream {
    /// Vehicles enter from outside the network.
    Boundary,
    /// Vehicles enter by being discharged from this intersection.
    Intersection(usize),
}

/// One approach lane. Cell 0 is the stop line; the highest index is the
/// upstream entry cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub movement: Movement,
    /// Occupancy flags, stop line first.
    pub cells: Vec<bool>,
    /// Set for cells whose vehicle arrived there during the last step.
    pub moved: Vec<bool>,
    pub upstream: LaneUpstream,
    /// Intersection whose signal controls this lane's stop line.
    pub controlled_by: usize,
    /// Lane entered after crossing `controlled_by`; `None` exits the network.
    pub next_lane: Option<usize>,
}

impl Lane {
    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Stationary occupied cells, i.e. vehicles that did not advance in the
    /// last step.
    pub fn waiting(&self) -> usize {
        self.cells
            .iter()
            .zip(&self.moved)
            .filter(|&(&occ, &mved)| occ && !mved)
            .count()
    }

    fn entry_index(&self) -> usize {
        self.cells.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intersection {
    pub id: usize,
    pub phase: Phase,
    /// Seconds spent in the current phase.
    pub phase_elapsed: u32,
    /// Commanded green duration, shared by both green phases.
    pub green_target: u32,
    /// Incoming lane ids, sorted by movement order.
    pub incoming: Vec<usize>,
    pub outgoing: Vec<usize>,
}

/// Full corridor configuration. Durations are in seconds and must be
/// integer multiples of `sim_step`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorridorConfig {
    pub n_intersections: usize,
    pub link_length: f64,
    pub cell_length: f64,
    pub lanes_per_approach: usize,
    /// Vehicles per second per entry lane before the multiplier.
    pub arrival_rate: f64,
    /// Arrival rate for the cross-street entries; defaults to
    /// `arrival_rate`. Setting it separately allows corridors whose
    /// connecting links stay empty (an exactly-zero spill-over rate) while
    /// the cross streets still load the signals.
    pub cross_arrival_rate: Option<f64>,
    /// Arrival rate for the west-bound through entry; defaults to
    /// `arrival_rate`. Zero makes the corridor one-way, which removes the
    /// upstream agent's local proxy for the downstream signal state.
    pub we_arrival_rate: Option<f64>,
    pub demand_multiplier: f64,
    pub yellow_duration: u32,
    pub min_green: u32,
    pub max_green: u32,
    pub decision_interval: u32,
    pub sim_step: u32,
    /// Spill-back detection threshold, in cells from the lane entry.
    pub threshold_cells: usize,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            n_intersections: 2,
            link_length: 300.0,
            cell_length: 7.5,
            lanes_per_approach: 1,
            arrival_rate: 0.1,
            cross_arrival_rate: None,
            we_arrival_rate: None,
            demand_multiplier: 1.0,
            yellow_duration: 3,
            min_green: 5,
            max_green: 60,
            decision_interval: 5,
            sim_step: 1,
            threshold_cells: 2,
        }
    }
}

impl CorridorConfig {
    /// Number of cells per lane.
    pub fn cells_per_link(&self) -> usize {
        (self.link_length / self.cell_length).round() as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let fail = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.n_intersections == 0 {
            return fail("n_intersections must be at least 1".into());
        }
        if self.cell_length <= 0.0 || self.link_length <= 0.0 {
            return fail("link_length and cell_length must be positive".into());
        }
        let ratio = self.link_length / self.cell_length;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return fail(format!(
                "link_length / cell_length must be a positive integer (got {ratio})"
            ));
        }
        if self.lanes_per_approach != 1 {
            return fail("lanes_per_approach: only single-lane approaches are supported".into());
        }
        if self.arrival_rate < 0.0 || self.demand_multiplier < 0.0 {
            return fail("arrival_rate and demand_multiplier must be non-negative".into());
        }
        if self.cross_arrival_rate.is_some_and(|r| r < 0.0) {
            return fail("cross_arrival_rate must be non-negative".into());
        }
        if self.we_arrival_rate.is_some_and(|r| r < 0.0) {
            return fail("we_arrival_rate must be non-negative".into());
        }
        if self.min_green > self.max_green {
            return fail(format!(
                "min_green ({}) must not exceed max_green ({})",
                self.min_green, self.max_green
            ));
        }
        if self.sim_step == 0 {
            return fail("sim_step must be positive".into());
        }
        if self.decision_interval < self.sim_step {
            return fail(format!(
                "decision_interval ({}) must be at least sim_step ({})",
                self.decision_interval, self.sim_step
            ));
        }
        for (name, value) in [
            ("yellow_duration", self.yellow_duration),
            ("min_green", self.min_green),
            ("max_green", self.max_green),
            ("decision_interval", self.decision_interval),
        ] {
            if value % self.sim_step != 0 {
                return fail(format!(
                    "{name} ({value}) must be an integer multiple of sim_step ({})",
                    self.sim_step
                ));
            }
        }
        if self.threshold_cells == 0 || self.threshold_cells > self.cells_per_link() {
            return fail(format!(
                "threshold_cells ({}) must lie in 1..={}",
                self.threshold_cells,
                self.cells_per_link()
            ));
        }
        Ok(())
    }

    /// Arrival probability per through entry lane per step.
    pub fn arrival_probability(&self) -> f64 {
        (self.arrival_rate * self.demand_multiplier * self.sim_step as f64).min(1.0)
    }

    /// Arrival probability per cross-street entry lane per step.
    pub fn cross_arrival_probability(&self) -> f64 {
        let rate = self.cross_arrival_rate.unwrap_or(self.arrival_rate);
        (rate * self.demand_multiplier * self.sim_step as f64).min(1.0)
    }

    /// Arrival probability for the west-bound through entry per step.
    pub fn we_arrival_probability(&self) -> f64 {
        let rate = self.we_arrival_rate.unwrap_or(self.arrival_rate);
        (rate * self.demand_multiplier * self.sim_step as f64).min(1.0)
    }
}

/// Complete simulator state. Stepping is a pure state transition; two states
/// built from the same seed and stepped identically stay bit-identical.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub intersections: Vec<Intersection>,
    pub lanes: Vec<Lane>,
    /// Simulation clock in seconds.
    pub clock: u64,
    rng: ChaCha8Rng,
    /// Fixed lane processing order, downstream lanes first within each chain.
    processing_order: Vec<usize>,
    pub injected: u64,
    pub exited: u64,
    pub dropped_arrivals: u64,
    /// Cumulative sum over steps of the per-intersection waiting count.
    pub waiting_cum: Vec<f64>,
}

impl SimState {
    /// Builds the initial empty corridor with all signals starting EW-green.
    pub fn new(config: &CorridorConfig, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        let n = config.n_intersections;
        let cells = config.cells_per_link();

        let mut lanes = Vec::new();
        // East-bound through lanes, entry at intersection 0.
        let ew_ids: Vec<usize> = (0..n)
            .map(|k| {
                lanes.push(Lane {
                    movement: Movement::ThroughEw,
                    cells: vec![false; cells],
                    moved: vec![false; cells],
                    upstream: if k == 0 {
                        LaneUpstream::Boundary
                    } else {
                        LaneUpstream::Intersection(k - 1)
                    },
                    controlled_by: k,
                    next_lane: None, // patched below
                });
                lanes.len() - 1
            })
            .collect();
        // West-bound through lanes, entry at intersection n-1.
        let we_ids: Vec<usize> = (0..n)
            .map(|k| {
                lanes.push(Lane {
                    movement: Movement::ThroughWe,
                    cells: vec![false; cells],
                    moved: vec![false; cells],
                    upstream: if k == n - 1 {
                        LaneUpstream::Boundary
                    } else {
                        LaneUpstream::Intersection(k + 1)
                    },
                    controlled_by: k,
                    next_lane: None,
                });
                lanes.len() - 1
            })
            .collect();
        let mut ns_ids = Vec::with_capacity(n);
        let mut sn_ids = Vec::with_capacity(n);
        for k in 0..n {
            for (movement, ids) in [
                (Movement::CrossNs, &mut ns_ids),
                (Movement::CrossSn, &mut sn_ids),
            ] {
                lanes.push(Lane {
                    movement,
                    cells: vec![false; cells],
                    moved: vec![false; cells],
                    upstream: LaneUpstream::Boundary,
                    controlled_by: k,
                    next_lane: None,
                });
                ids.push(lanes.len() - 1);
            }
        }
        // Chain links: crossing intersection k continues onto the next lane
        // of the same movement, or exits at the corridor end.
        for k in 0..n {
            lanes[ew_ids[k]].next_lane = if k + 1 < n { Some(ew_ids[k + 1]) } else { None };
            lanes[we_ids[k]].next_lane = if k > 0 { Some(we_ids[k - 1]) } else { None };
        }

        let intersections = (0..n)
            .map(|k| Intersection {
                id: k,
                phase: Phase::EwGreen,
                phase_elapsed: 0,
                green_target: config.min_green.max(20).min(config.max_green),
                incoming: vec![ew_ids[k], we_ids[k], ns_ids[k], sn_ids[k]],
                outgoing: [
                    (k + 1 < n).then(|| ew_ids[k + 1]),
                    (k > 0).then(|| we_ids[k - 1]),
                ]
                .into_iter()
                .flatten()
                .collect(),
            })
            .collect();

        // Downstream-first: a discharged vehicle may use a cell freed by the
        // downstream lane in the same step, giving unit saturation flow.
        let mut processing_order = Vec::with_capacity(lanes.len());
        processing_order.extend(ew_ids.iter().rev());
        processing_order.extend(we_ids.iter());
        processing_order.extend(ns_ids.iter());
        processing_order.extend(sn_ids.iter());

        Ok(Self {
            intersections,
            lanes,
            clock: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            processing_order,
            injected: 0,
            exited: 0,
            dropped_arrivals: 0,
            waiting_cum: vec![0.0; n],
        })
    }

    /// Lanes whose upstream end is another intersection (the coupling links).
    pub fn connecting_lanes(&self) -> Vec<usize> {
        (0..self.lanes.len())
            .filter(|&id| matches!(self.lanes[id].upstream, LaneUpstream::Intersection(_)))
            .collect()
    }

    pub fn vehicle_count(&self) -> u64 {
        self.lanes.iter().map(|l| l.occupied_count() as u64).sum()
    }

    /// Advances the simulation by one step of `config.sim_step` seconds.
    pub fn step(&mut self, config: &CorridorConfig) {
        for lane in &mut self.lanes {
            lane.moved.iter_mut().for_each(|m| *m = false);
        }

        // Vehicle movement, fixed lane order, stop line first within a lane.
        for idx in 0..self.processing_order.len() {
            let lane_id = self.processing_order[idx];
            self.advance_lane(lane_id);
        }

        // Waiting accumulation uses the freshly computed moved flags.
        for i in 0..self.intersections.len() {
            let w: usize = self.intersections[i]
                .incoming
                .iter()
                .map(|&l| self.lanes[l].waiting())
                .sum();
            self.waiting_cum[i] += w as f64;
        }

        // Bernoulli arrivals at boundary lanes. The draw happens whether or
        // not the entry cell is free, so the arrival stream is policy
        // independent; blocked arrivals are counted as dropped.
        let p_through = config.arrival_probability();
        let p_we = config.we_arrival_probability();
        let p_cross = config.cross_arrival_probability();
        for lane_id in 0..self.lanes.len() {
            if self.lanes[lane_id].upstream != LaneUpstream::Boundary {
                continue;
            }
            let p = match self.lanes[lane_id].movement {
                Movement::ThroughEw => p_through,
                Movement::ThroughWe => p_we,
                Movement::CrossNs | Movement::CrossSn => p_cross,
            };
            let draw: f64 = self.rng.gen();
            if draw < p {
                let entry = self.lanes[lane_id].entry_index();
                if self.lanes[lane_id].cells[entry] {
                    self.dropped_arrivals += 1;
                } else {
                    self.lanes[lane_id].cells[entry] = true;
                    self.lanes[lane_id].moved[entry] = true;
                    self.injected += 1;
                }
            }
        }

        // Clock and signal timers.
        self.clock += config.sim_step as u64;
        for inter in &mut self.intersections {
            inter.phase_elapsed += config.sim_step;
            match inter.phase {
                Phase::EwGreen if inter.phase_elapsed >= inter.green_target => {
                    inter.phase = Phase::YellowToNs;
                    inter.phase_elapsed = 0;
                }
                Phase::NsGreen if inter.phase_elapsed >= inter.green_target => {
                    inter.phase = Phase::YellowToEw;
                    inter.phase_elapsed = 0;
                }
                Phase::YellowToNs if inter.phase_elapsed >= config.yellow_duration => {
                    inter.phase = Phase::NsGreen;
                    inter.phase_elapsed = 0;
                }
                Phase::YellowToEw if inter.phase_elapsed >= config.yellow_duration => {
                    inter.phase = Phase::EwGreen;
                    inter.phase_elapsed = 0;
                }
                _ => {}
            }
        }
    }

    fn advance_lane(&mut self, lane_id: usize) {
        // Stop-line cell: cross or stay.
        let (green, next_lane) = {
            let lane = &self.lanes[lane_id];
            let phase = self.intersections[lane.controlled_by].phase;
            (phase.serves(lane.movement), lane.next_lane)
        };
        if self.lanes[lane_id].cells[0] && !self.lanes[lane_id].moved[0] && green {
            match next_lane {
                None => {
                    self.lanes[lane_id].cells[0] = false;
                    self.exited += 1;
                }
                Some(dst) => {
                    let entry = self.lanes[dst].entry_index();
                    if !self.lanes[dst].cells[entry] {
                        self.lanes[lane_id].cells[0] = false;
                        self.lanes[dst].cells[entry] = true;
                        self.lanes[dst].moved[entry] = true;
                    }
                }
            }
        }
        // Interior cells advance toward the stop line.
        let lane = &mut self.lanes[lane_id];
        for k in 1..lane.cells.len() {
            if lane.cells[k] && !lane.moved[k] && !lane.cells[k - 1] {
                lane.cells[k] = false;
                lane.cells[k - 1] = true;
                lane.moved[k - 1] = true;
            }
        }
    }

    /// Adjusts the commanded green duration of one intersection. Only legal
    /// at decision boundaries; calling it elsewhere is a harness bug.
    pub fn apply_action(
        &mut self,
        intersection_id: usize,
        action: Action,
        config: &CorridorConfig,
    ) -> Result<(), SimError> {
        if self.clock % config.decision_interval as u64 != 0 {
            return Err(SimError::OffDecisionBoundary {
                clock: self.clock,
                interval: config.decision_interval,
            });
        }
        let inter = self
            .intersections
            .get_mut(intersection_id)
            .ok_or(SimError::UnknownIntersection(intersection_id))?;
        let target = inter.green_target as i64 + action.delta_seconds();
        inter.green_target = target.clamp(config.min_green as i64, config.max_green as i64) as u32;
        Ok(())
    }

    /// Per-lane counts of stationary vehicles on the incoming lanes.
    pub fn waiting_count(&self, intersection_id: usize) -> Result<Vec<usize>, SimError> {
        let inter = self
            .intersections
            .get(intersection_id)
            .ok_or(SimError::UnknownIntersection(intersection_id))?;
        Ok(inter
            .incoming
            .iter()
            .map(|&l| self.lanes[l].waiting())
            .collect())
    }

    /// Binary occupancy of all incoming lanes (stop line first, lanes in
    /// movement order) followed by the one-hot phase encoding.
    pub fn encode_observation(
        &self,
        intersection_id: usize,
        config: &CorridorConfig,
    ) -> Result<OccupancyState, SimError> {
        let inter = self
            .intersections
            .get(intersection_id)
            .ok_or(SimError::UnknownIntersection(intersection_id))?;
        let cells = config.cells_per_link();
        let mut data = Vec::with_capacity(inter.incoming.len() * cells + Phase::COUNT);
        let mut sorted = inter.incoming.clone();
        sorted.sort_by_key(|&l| self.lanes[l].movement);
        for lane_id in sorted {
            data.extend(self.lanes[lane_id].cells.iter().map(|&c| f64::from(u8::from(c))));
        }
        let mut one_hot = [0.0; Phase::COUNT];
        one_hot[inter.phase.one_hot_index()] = 1.0;
        data.extend_from_slice(&one_hot);
        Ok(OccupancyState { data })
    }

    /// Observation vector length for one intersection.
    pub fn observation_len(config: &CorridorConfig) -> usize {
        4 * config.cells_per_link() + Phase::COUNT
    }
}

/// Binary cell occupancy plus phase encoding; the RL observation for one
/// intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyState {
    pub data: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> CorridorConfig {
        CorridorConfig {
            link_length: 22.5, // 3 cells
            arrival_rate: 0.0,
            ..CorridorConfig::default()
        }
    }

    fn ew_entry_lane(state: &SimState) -> usize {
        state.intersections[0].incoming[0]
    }

    #[test]
    fn single_vehicle_advances_one_cell_per_step() {
        let config = small_config();
        let mut state = SimState::new(&config, 0).unwrap();
        let lane = ew_entry_lane(&state);
        state.lanes[lane].cells[2] = true; // at lane entry
        state.step(&config);
        assert_eq!(state.lanes[lane].cells, vec![false, true, false]);
    }

    #[test]
    fn red_holds_the_queue() {
        let config = small_config();
        let mut state = SimState::new(&config, 0).unwrap();
        // EW green by default; park a vehicle on the NS lane stop line.
        let ns = state.intersections[0].incoming[2];
        state.lanes[ns].cells[0] = true;
        let before = state.lanes[ns].cells.clone();
        state.step(&config);
        assert_eq!(state.lanes[ns].cells, before);
        assert_eq!(state.waiting_count(0).unwrap(), vec![0, 0, 1, 0]);
    }

    #[test]
    fn blocked_downstream_entry_prevents_crossing() {
        let config = small_config();
        let mut state = SimState::new(&config, 0).unwrap();
        let up = state.intersections[0].incoming[0];
        let down = state.lanes[up].next_lane.unwrap();
        state.lanes[up].cells[0] = true;
        // Downstream signal red for through traffic and the link full: the
        // entry cell stays occupied, so the upstream vehicle is blocked on
        // green. This is the spill-back mechanism.
        state.intersections[1].phase = Phase::NsGreen;
        state.intersections[1].green_target = u32::MAX;
        state.lanes[down].cells.iter_mut().for_each(|c| *c = true);
        state.step(&config);
        assert!(state.lanes[up].cells[0], "vehicle must stay put");
    }

    #[test]
    fn green_discharges_across_the_intersection() {
        let config = small_config();
        let mut state = SimState::new(&config, 0).unwrap();
        let up = state.intersections[0].incoming[0];
        let down = state.lanes[up].next_lane.unwrap();
        state.lanes[up].cells[0] = true;
        state.step(&config);
        assert!(!state.lanes[up].cells[0]);
        assert!(state.lanes[down].cells[2], "vehicle entered downstream entry cell");
    }

    #[test]
    fn exit_at_corridor_end() {
        let config = small_config();
        let mut state = SimState::new(&config, 0).unwrap();
        let last = config.n_intersections - 1;
        let lane = state.intersections[last].incoming[0];
        state.lanes[lane].cells[0] = true;
        state.injected += 1;
        state.step(&config);
        assert_eq!(state.exited, 1);
        assert_eq!(state.vehicle_count(), 0);
    }

    #[test]
    fn compact_platoon_advances_together() {
        let config = small_config();
        let mut state = SimState::new(&config, 0).unwrap();
        let lane = ew_entry_lane(&state);
        // Queue of three on a green approach; head crosses, the rest close up.
        state.lanes[lane].cells = vec![true, true, true];
        state.lanes[lane].moved = vec![false, false, false];
        state.step(&config);
        assert_eq!(state.lanes[lane].cells, vec![true, true, false]);
        assert_eq!(state.waiting_count(0).unwrap()[0], 0, "everyone moved");
    }

    #[test]
    fn action_adjusts_green_target_with_clamping() {
        let config = small_config();
        let mut state = SimState::new(&config, 0).unwrap();
        state.intersections[0].green_target = 20;
        state.apply_action(0, Action::Increase, &config).unwrap();
        assert_eq!(state.intersections[0].green_target, 25);
        state.intersections[0].green_target = config.max_green;
        state.apply_action(0, Action::Increase, &config).unwrap();
        assert_eq!(state.intersections[0].green_target, config.max_green);
        state.intersections[0].green_target = config.min_green;
        state.apply_action(0, Action::Decrease, &config).unwrap();
        assert_eq!(state.intersections[0].green_target, config.min_green);
    }

    #[test]
    fn action_off_boundary_is_rejected() {
        let config = small_config();
        let mut state = SimState::new(&config, 0).unwrap();
        state.step(&config); // clock = 1s, decision_interval = 5s
        let err = state.apply_action(0, Action::Hold, &config).unwrap_err();
        assert!(matches!(err, SimError::OffDecisionBoundary { .. }));
    }

    #[test]
    fn yellow_fires_after_green_target_and_lasts_exactly_yellow_duration() {
        let config = small_config();
        let mut state = SimState::new(&config, 0).unwrap();
        state.intersections[0].green_target = 5;
        for _ in 0..5 {
            assert_eq!(state.intersections[0].phase, Phase::EwGreen);
            state.step(&config);
        }
        assert_eq!(state.intersections[0].phase, Phase::YellowToNs);
        for _ in 0..config.yellow_duration {
            assert_eq!(state.intersections[0].phase, Phase::YellowToNs);
            state.step(&config);
        }
        assert_eq!(state.intersections[0].phase, Phase::NsGreen);
    }

    #[test]
    fn observation_layout_and_phase_one_hot() {
        let config = small_config();
        let mut state = SimState::new(&config, 0).unwrap();
        state.intersections[0].phase = Phase::NsGreen;
        let obs = state.encode_observation(0, &config).unwrap();
        assert_eq!(obs.data.len(), SimState::observation_len(&config));
        assert!(obs.data[..12].iter().all(|&v| v == 0.0));
        assert_eq!(&obs.data[12..], &[1.0, 0.0, 0.0, 0.0]);

        let entry = ew_entry_lane(&state);
        state.lanes[entry].cells[0] = true;
        let obs = state.encode_observation(0, &config).unwrap();
        assert_eq!(obs.data[0], 1.0);
        assert_eq!(obs.data[1..12].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn full_lane_encodes_all_ones() {
        let config = CorridorConfig {
            arrival_rate: 0.0,
            ..CorridorConfig::default()
        };
        let mut state = SimState::new(&config, 0).unwrap();
        assert_eq!(config.cells_per_link(), 40);
        let lane = ew_entry_lane(&state);
        state.lanes[lane].cells.iter_mut().for_each(|c| *c = true);
        let obs = state.encode_observation(0, &config).unwrap();
        assert_eq!(obs.data[..40].iter().sum::<f64>(), 40.0);
    }

    #[test]
    fn default_observation_length_matches_topology() {
        let config = CorridorConfig::default();
        assert_eq!(SimState::observation_len(&config), 164);
    }

    #[test]
    fn waiting_derived_example_head_crosses_rest_advance() {
        // Four vehicles queued at a green stop line with free downstream:
        // the head crosses and every follower advances, so none waits.
        let config = CorridorConfig {
            arrival_rate: 0.0,
            ..CorridorConfig::default()
        };
        let mut state = SimState::new(&config, 0).unwrap();
        let lane = ew_entry_lane(&state);
        for k in 0..4 {
            state.lanes[lane].cells[k] = true;
        }
        state.step(&config);
        assert_eq!(state.waiting_count(0).unwrap()[0], 0);
    }

    #[test]
    fn arrivals_drop_when_entry_occupied() {
        let config = CorridorConfig {
            link_length: 22.5,
            arrival_rate: 1.0, // every step brings an arrival per entry lane
            ..CorridorConfig::default()
        };
        let mut state = SimState::new(&config, 7).unwrap();
        // Hold everything red-ish by pointing phase away and filling lanes.
        for inter in &mut state.intersections {
            inter.phase = Phase::YellowToNs;
            inter.green_target = u32::MAX; // never reached; yellow refires to NsGreen
        }
        for _ in 0..30 {
            state.step(&config);
        }
        assert!(state.dropped_arrivals > 0);
        let present = state.vehicle_count();
        assert_eq!(state.injected - state.exited, present);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = CorridorConfig {
            link_length: 10.0,
            cell_length: 3.0,
            ..CorridorConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CorridorConfig {
            min_green: 70,
            max_green: 60,
            ..CorridorConfig::default()
        };
        assert!(matches!(bad.validate(), Err(SimError::InvalidConfig(m)) if m.contains("min_green")));
    }
}
