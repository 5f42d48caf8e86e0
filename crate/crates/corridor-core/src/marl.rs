//! Multi-agent observation, action and reward plumbing on top of the
//! simulator. Observations are exact and local: agent `i` sees only its own
//! incoming lanes and phase.

use crate::sim::{Action, CorridorConfig, SimError, SimState};
use serde::{Deserialize, Serialize};

/// One agent's view: its intersection's occupancy block plus phase one-hot.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentObservation {
    pub agent_id: usize,
    pub data: Vec<f64>,
}

/// One action per intersection, in agent-index order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointAction {
    pub per_agent: Vec<Action>,
}

impl JointAction {
    pub fn hold(n_agents: usize) -> Self {
        Self {
            per_agent: vec![Action::Hold; n_agents],
        }
    }
}

/// Per-agent rewards (each non-positive) and their team sum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVector {
    pub per_agent: Vec<f64>,
    pub team: f64,
}

impl RewardVector {
    pub fn new(per_agent: Vec<f64>) -> Self {
        let team = per_agent.iter().sum();
        Self { per_agent, team }
    }
}

/// Replay record for one decision step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Transition {
    /// Joint observation (per-agent blocks concatenated).
    pub obs: Vec<f64>,
    pub action: JointAction,
    pub reward: RewardVector,
    pub next_obs: Vec<f64>,
    /// Spill-back flag at the time of acting.
    pub spillback: bool,
    /// Last decision step of an episode.
    pub terminal: bool,
}

/// Joint observation with the agent block boundaries recorded for the
/// block-partitioned network.
#[derive(Debug, Clone, PartialEq)]
pub struct JointObservation {
    pub data: Vec<f64>,
    /// Offsets `[0, L, 2L, ...]`; block `i` is `data[offsets[i]..offsets[i+1]]`.
    pub offsets: Vec<usize>,
}

/// Concatenates per-agent observations in agent-index order.
pub fn joint_observe(state: &SimState, config: &CorridorConfig) -> Result<JointObservation, SimError> {
    let n = state.intersections.len();
    let mut data = Vec::with_capacity(n * SimState::observation_len(config));
    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0);
    for i in 0..n {
        let obs = state.encode_observation(i, config)?;
        data.extend_from_slice(&obs.data);
        offsets.push(data.len());
    }
    Ok(JointObservation { data, offsets })
}

/// Per-agent reward over one decision interval: the negative mean over the
/// interval's sim steps of the waiting-vehicle count on the agent's incoming
/// lanes. Uses the cumulative waiting counters carried by the state.
pub fn compute_reward(
    state_before: &SimState,
    state_after: &SimState,
    config: &CorridorConfig,
) -> Result<RewardVector, SimError> {
    if state_before.intersections.len() != state_after.intersections.len() {
        return Err(SimError::InvalidConfig(
            "reward states come from different corridors".into(),
        ));
    }
    let dt = state_after.clock.saturating_sub(state_before.clock);
    let steps = (dt / config.sim_step as u64) as f64;
    let per_agent = state_before
        .waiting_cum
        .iter()
        .zip(&state_after.waiting_cum)
        .map(|(&before, &after)| {
            if steps == 0.0 {
                0.0
            } else {
                -(after - before) / steps
            }
        })
        .collect();
    Ok(RewardVector::new(per_agent))
}

/// Applies a joint action and advances the simulator by one decision
/// interval, returning the reward earned over the interval.
pub fn advance_decision_interval(
    state: &mut SimState,
    action: &JointAction,
    config: &CorridorConfig,
) -> Result<RewardVector, SimError> {
    let before = state.clone();
    for (i, &a) in action.per_agent.iter().enumerate() {
        state.apply_action(i, a, config)?;
    }
    let steps = config.decision_interval / config.sim_step;
    for _ in 0..steps {
        state.step(config);
    }
    compute_reward(&before, state, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::Phase;

    fn config() -> CorridorConfig {
        CorridorConfig {
            arrival_rate: 0.0,
            ..CorridorConfig::default()
        }
    }

    #[test]
    fn empty_corridor_earns_zero_reward() {
        let config = config();
        let mut state = SimState::new(&config, 0).unwrap();
        let reward =
            advance_decision_interval(&mut state, &JointAction::hold(2), &config).unwrap();
        assert_eq!(reward.per_agent, vec![0.0, 0.0]);
        assert_eq!(reward.team, 0.0);
    }

    #[test]
    fn constant_queue_gives_its_size_as_negative_reward() {
        let config = config();
        let mut state = SimState::new(&config, 0).unwrap();
        // Four vehicles held at agent 0's red NS approach, nothing at agent 1.
        let ns = state.intersections[0].incoming[2];
        for k in 0..4 {
            state.lanes[ns].cells[k] = true;
        }
        state.intersections[0].green_target = u32::MAX; // EW green stays on
        state.intersections[1].green_target = u32::MAX;
        let reward =
            advance_decision_interval(&mut state, &JointAction::hold(2), &config).unwrap();
        assert_eq!(reward.per_agent, vec![-4.0, 0.0]);
        assert_eq!(reward.team, -4.0);
    }

    #[test]
    fn reward_is_the_mean_over_interval_steps() {
        // A scripted build-up: queue sizes per step 2,3,3,4,4 -> mean 3.2.
        let config = config();
        let mut state = SimState::new(&config, 0).unwrap();
        let ns = state.intersections[0].incoming[2];
        state.intersections[0].phase = Phase::EwGreen;
        state.intersections[0].green_target = u32::MAX;
        state.intersections[1].green_target = u32::MAX;
        // Two vehicles already queued at the stop line.
        state.lanes[ns].cells[0] = true;
        state.lanes[ns].cells[1] = true;
        // Arrange upstream vehicles so one joins at steps 1 and 3, counted
        // waiting from the following step: occupancy at cells 3 and 6.
        state.lanes[ns].cells[3] = true;
        state.lanes[ns].cells[6] = true;
        let before = state.clone();
        let mut counts = Vec::new();
        for _ in 0..5 {
            state.step(&config);
            counts.push(state.waiting_count(0).unwrap().iter().sum::<usize>());
        }
        assert_eq!(counts, vec![2, 3, 3, 4, 4]);
        let reward = compute_reward(&before, &state, &config).unwrap();
        assert!((reward.per_agent[0] - (-3.2)).abs() < 1e-12);
    }

    #[test]
    fn joint_observation_concatenates_agent_blocks() {
        let config = config();
        let state = SimState::new(&config, 0).unwrap();
        let joint = joint_observe(&state, &config).unwrap();
        let len = SimState::observation_len(&config);
        assert_eq!(joint.offsets, vec![0, len, 2 * len]);
        assert_eq!(joint.data.len(), 2 * len);
    }

    #[test]
    fn observation_blocks_are_local() {
        let config = config();
        let mut state = SimState::new(&config, 0).unwrap();
        let baseline = joint_observe(&state, &config).unwrap();
        // Perturb agent 1's cross lane; agent 0's block must not change.
        let lane = state.intersections[1].incoming[2];
        state.lanes[lane].cells[5] = true;
        let perturbed = joint_observe(&state, &config).unwrap();
        let len = SimState::observation_len(&config);
        assert_eq!(&baseline.data[..len], &perturbed.data[..len]);
        assert_ne!(&baseline.data[len..], &perturbed.data[len..]);
    }

    #[test]
    fn team_reward_is_exactly_the_sum() {
        let reward = RewardVector::new(vec![-1.25, -0.5]);
        assert_eq!(reward.team, -1.75);
    }
}
