//! Training loops: the spill-back-conditioned masked learner plus the
//! independent, centralized, and neighbor-communicating DQN baselines.
//!
//! All four algorithms share one loop skeleton, one replay stream, and one
//! RNG discipline; they differ only in network structure, observation
//! encoding, and which weight blocks an update may touch. That shared
//! plumbing is what makes the exact equivalence properties testable: with
//! zero cross-blocks and no spill-back the masked learner is bit-identical
//! to independent per-agent training, and under permanent spill-back it is
//! bit-identical to the centralized learner.

use crate::marl::{advance_decision_interval, joint_observe, JointAction, Transition};
use crate::qfunction::replay::{ReplayBuffer, ReplayError};
use crate::qfunction::{
    argmax, batch_gradient, BatchSample, BlockParams, QError, QNetwork, UpdateMask,
};
use crate::sim::{Action, CorridorConfig, SimError, SimState};
use crate::spillback::{episode_rate, status, SpillbackError, SpillbackStatus};
use crate::ExecMode;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Q(#[from] QError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Spillback(#[from] SpillbackError),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at episode {episode}: non-finite batch loss")]
    Diverged { episode: usize },
}

/// The four learners.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlgorithmKind {
    /// Block net; off-diagonal blocks update only while spill-back is present.
    Dpus,
    /// Independent per-agent learners: off-diagonal blocks pinned at zero.
    InDqn,
    /// Block net with unconditional full updates.
    CenDqn,
    /// Per-agent nets over observations augmented with the neighbors'
    /// observations and last actions.
    CoDqn,
}

impl AlgorithmKind {
    pub const ALL: [AlgorithmKind; 4] = [
        AlgorithmKind::Dpus,
        AlgorithmKind::InDqn,
        AlgorithmKind::CenDqn,
        AlgorithmKind::CoDqn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AlgorithmKind::Dpus => "dpus",
            AlgorithmKind::InDqn => "in_dqn",
            AlgorithmKind::CenDqn => "cen_dqn",
            AlgorithmKind::CoDqn => "co_dqn",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|k| k.name() == name)
    }

    fn mask_for(self, spillback: bool) -> UpdateMask {
        match self {
            AlgorithmKind::Dpus => {
                if spillback {
                    UpdateMask::Full
                } else {
                    UpdateMask::Diagonal
                }
            }
            AlgorithmKind::InDqn => UpdateMask::Diagonal,
            AlgorithmKind::CenDqn | AlgorithmKind::CoDqn => UpdateMask::Full,
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub epsilon_decay_fraction: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Decision steps between update triggers.
    pub update_frequency: usize,
    /// Updates between target-network syncs.
    pub target_sync_period: usize,
    pub updates_per_trigger: usize,
    pub episodes: usize,
    /// Decision steps per episode.
    pub horizon: usize,
    pub seed: u64,
    pub hidden_layers: usize,
    pub hidden_per_agent: usize,
    pub priority_exponent: f64,
    pub priority_floor: f64,
    pub grad_clip_norm: f64,
    /// Start every learner with zeroed cross-agent blocks.
    pub zero_off_diagonal_init: bool,
    /// Overrides the detected spill-back flag everywhere in the loop.
    pub force_spillback: Option<bool>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            learning_rate: 1e-3,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_fraction: 0.6,
            buffer_capacity: 50_000,
            batch_size: 32,
            update_frequency: 4,
            target_sync_period: 200,
            updates_per_trigger: 1,
            episodes: 800,
            horizon: 720,
            seed: 0,
            hidden_layers: 2,
            hidden_per_agent: 64,
            priority_exponent: 0.6,
            priority_floor: 1e-3,
            grad_clip_norm: 10.0,
            zero_off_diagonal_init: false,
            force_spillback: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: String| Err(TrainError::InvalidConfig(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return fail(format!("gamma ({}) must lie in [0, 1)", self.gamma));
        }
        if self.learning_rate <= 0.0 {
            return fail("learning_rate must be positive".into());
        }
        for (name, v) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} ({v}) must lie in [0, 1]"));
            }
        }
        if self.epsilon_end > self.epsilon_start {
            return fail(format!(
                "epsilon_end ({}) must not exceed epsilon_start ({})",
                self.epsilon_end, self.epsilon_start
            ));
        }
        if !(self.epsilon_decay_fraction > 0.0 && self.epsilon_decay_fraction <= 1.0) {
            return fail("epsilon_decay_fraction must lie in (0, 1]".into());
        }
        for (name, v) in [
            ("buffer_capacity", self.buffer_capacity),
            ("batch_size", self.batch_size),
            ("update_frequency", self.update_frequency),
            ("target_sync_period", self.target_sync_period),
            ("updates_per_trigger", self.updates_per_trigger),
            ("episodes", self.episodes),
            ("horizon", self.horizon),
        ] {
            if v == 0 {
                return fail(format!("{name} must be at least 1"));
            }
        }
        if self.priority_exponent < 0.0 || self.priority_floor < 0.0 {
            return fail("priority_exponent and priority_floor must be non-negative".into());
        }
        if self.grad_clip_norm <= 0.0 {
            return fail("grad_clip_norm must be positive".into());
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end` over the first
    /// `epsilon_decay_fraction` of the episodes; the floor is reached exactly
    /// at episode `decay_episodes` and held afterwards.
    pub fn epsilon_for_episode(&self, episode: usize) -> f64 {
        let decay_episodes = ((self.episodes as f64 * self.epsilon_decay_fraction).floor()
            as usize)
            .max(1);
        if episode >= decay_episodes {
            self.epsilon_end
        } else {
            let frac = episode as f64 / decay_episodes as f64;
            self.epsilon_start - (self.epsilon_start - self.epsilon_end) * frac
        }
    }
}

/// Per-episode results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Sum over the episode's decision steps of the team reward (≤ 0).
    pub team_reward: f64,
    pub per_agent: Vec<f64>,
    /// Fraction of decision steps with spill-back present.
    pub measured_rate: f64,
    pub epsilon: f64,
    pub dropped_arrivals: u64,
    pub wall_seconds: f64,
}

/// Optional instrumentation for equivalence and convergence tests.
#[derive(Default)]
pub struct TrainHooks {
    /// Record a parameter digest after every update.
    pub record_digests: bool,
    /// Observations (in the algorithm's encoding) whose greedy actions are
    /// recorded after every episode.
    pub probe_set: Option<Vec<Vec<f64>>>,
}

/// Everything the loop observed, for analysis and tests.
#[derive(Debug, Default, Clone)]
pub struct TrainRecord {
    pub update_losses: Vec<f64>,
    pub update_masks: Vec<UpdateMask>,
    /// Environment spill-back flag at the moment of each update.
    pub update_spill_flags: Vec<bool>,
    /// Parameter digest after each update (with `record_digests`).
    pub digests: Vec<u64>,
    /// Greedy probe actions per episode, flattened probe-major then agent.
    pub probe_actions: Vec<Vec<usize>>,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub nets: Vec<QNetwork>,
    pub metrics: Vec<EpisodeMetrics>,
    pub record: TrainRecord,
}

/// Which slice of the stored observation each network reads and which
/// agents' heads it owns.
#[derive(Debug, Clone)]
pub struct NetSpec {
    pub obs_range: Range<usize>,
    pub agents: Vec<usize>,
}

/// Observation encoding and network layout for one algorithm on one
/// corridor.
pub struct Layout {
    pub kind: AlgorithmKind,
    pub n_agents: usize,
    pub agent_obs_len: usize,
    pub specs: Vec<NetSpec>,
    pub stored_obs_len: usize,
}

impl Layout {
    pub fn new(kind: AlgorithmKind, corridor: &CorridorConfig) -> Self {
        let n = corridor.n_intersections;
        let len = SimState::observation_len(corridor);
        match kind {
            AlgorithmKind::Dpus | AlgorithmKind::InDqn | AlgorithmKind::CenDqn => Self {
                kind,
                n_agents: n,
                agent_obs_len: len,
                specs: vec![NetSpec {
                    obs_range: 0..n * len,
                    agents: (0..n).collect(),
                }],
                stored_obs_len: n * len,
            },
            AlgorithmKind::CoDqn => {
                let mut specs = Vec::with_capacity(n);
                let mut offset = 0;
                for i in 0..n {
                    let view = len + neighbors(i, n).len() * (len + Action::COUNT);
                    specs.push(NetSpec {
                        obs_range: offset..offset + view,
                        agents: vec![i],
                    });
                    offset += view;
                }
                Self {
                    kind,
                    n_agents: n,
                    agent_obs_len: len,
                    specs,
                    stored_obs_len: offset,
                }
            }
        }
    }

    /// Builds the stored observation for the current state. The neighbor
    /// blocks of the communicating baseline carry the neighbors' previous
    /// actions one-hot.
    pub fn encode(
        &self,
        state: &SimState,
        corridor: &CorridorConfig,
        last_action: &JointAction,
    ) -> Result<Vec<f64>, SimError> {
        let joint = joint_observe(state, corridor)?;
        match self.kind {
            AlgorithmKind::Dpus | AlgorithmKind::InDqn | AlgorithmKind::CenDqn => Ok(joint.data),
            AlgorithmKind::CoDqn => {
                let len = self.agent_obs_len;
                let mut data = Vec::with_capacity(self.stored_obs_len);
                for i in 0..self.n_agents {
                    data.extend_from_slice(&joint.data[i * len..(i + 1) * len]);
                    for j in neighbors(i, self.n_agents) {
                        data.extend_from_slice(&joint.data[j * len..(j + 1) * len]);
                        let mut one_hot = [0.0; Action::COUNT];
                        one_hot[last_action.per_agent[j].index()] = 1.0;
                        data.extend_from_slice(&one_hot);
                    }
                }
                Ok(data)
            }
        }
    }

    /// Builds the networks. One draw stream covers all nets so the whole
    /// initialization is a pure function of the seed.
    pub fn build_nets(&self, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<QNetwork> {
        self.specs
            .iter()
            .map(|spec| {
                let n_heads = spec.agents.len();
                let part = spec.obs_range.len() / n_heads.max(1);
                let parts = vec![part; n_heads];
                let mut params = BlockParams::zeros(
                    &parts,
                    config.hidden_layers,
                    config.hidden_per_agent,
                    Action::COUNT,
                );
                params.init_glorot(rng);
                if self.kind == AlgorithmKind::InDqn || config.zero_off_diagonal_init {
                    params.zero_off_diagonal();
                }
                QNetwork::new(params)
            })
            .collect()
    }

    /// Q-value heads for every agent, in agent order.
    pub fn eval_heads(&self, nets: &[QNetwork], obs: &[f64]) -> Result<Vec<Vec<f64>>, QError> {
        let mut heads = vec![Vec::new(); self.n_agents];
        for (net, spec) in nets.iter().zip(&self.specs) {
            let values = net.online.forward(&obs[spec.obs_range.clone()])?;
            for (&agent, head) in spec.agents.iter().zip(values) {
                heads[agent] = head;
            }
        }
        Ok(heads)
    }
}

fn neighbors(i: usize, n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(2);
    if i > 0 {
        out.push(i - 1);
    }
    if i + 1 < n {
        out.push(i + 1);
    }
    out
}

/// ε-greedy over per-agent heads: each agent independently explores with
/// probability ε, otherwise takes its head's argmax with ties broken toward
/// the lowest action index.
pub fn select_action<R: Rng>(heads: &[Vec<f64>], epsilon: f64, rng: &mut R) -> JointAction {
    let per_agent = heads
        .iter()
        .map(|head| {
            let explore = rng.gen::<f64>() < epsilon;
            let index = if explore {
                rng.gen_range(0..Action::COUNT)
            } else {
                argmax(head)
            };
            Action::from_index(index).unwrap()
        })
        .collect();
    JointAction { per_agent }
}

/// Greedy joint action (ε = 0).
pub fn greedy_action(heads: &[Vec<f64>]) -> JointAction {
    JointAction {
        per_agent: heads
            .iter()
            .map(|h| Action::from_index(argmax(h)).unwrap())
            .collect(),
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

struct Streams {
    init: ChaCha8Rng,
    explore: ChaCha8Rng,
    replay: ChaCha8Rng,
    env_base: u64,
}

impl Streams {
    fn from_seed(seed: u64) -> Self {
        let mut seeder = ChaCha8Rng::seed_from_u64(seed);
        let init = ChaCha8Rng::seed_from_u64(seeder.next_u64());
        let explore = ChaCha8Rng::seed_from_u64(seeder.next_u64());
        let replay = ChaCha8Rng::seed_from_u64(seeder.next_u64());
        let env_base = seeder.next_u64();
        Self {
            init,
            explore,
            replay,
            env_base,
        }
    }

    fn env_seed(&self, episode: usize) -> u64 {
        splitmix64(self.env_base ^ (episode as u64).wrapping_mul(0x9E3779B97F4A7C15))
    }
}

fn spill_status(
    state: &SimState,
    corridor: &CorridorConfig,
    force: Option<bool>,
) -> Result<SpillbackStatus, SpillbackError> {
    let mut st = status(state, corridor.threshold_cells)?;
    if let Some(forced) = force {
        st.per_link.iter_mut().for_each(|(_, f)| *f = forced);
        st.any = forced;
    }
    Ok(st)
}

/// The networks a training run starts from, for initialization-sensitive
/// equivalence checks. Uses exactly the stream discipline of [`train`].
pub fn initial_nets(
    kind: AlgorithmKind,
    config: &TrainConfig,
    corridor: &CorridorConfig,
) -> Result<Vec<QNetwork>, TrainError> {
    config.validate()?;
    corridor.validate()?;
    let layout = Layout::new(kind, corridor);
    let mut streams = Streams::from_seed(config.seed);
    Ok(layout.build_nets(config, &mut streams.init))
}

/// Runs one training cell.
pub fn train(
    kind: AlgorithmKind,
    config: &TrainConfig,
    corridor: &CorridorConfig,
    hooks: &TrainHooks,
    mode: ExecMode,
) -> Result<TrainOutput, TrainError> {
    config.validate()?;
    corridor.validate()?;
    let layout = Layout::new(kind, corridor);
    let mut streams = Streams::from_seed(config.seed);
    let mut nets = layout.build_nets(config, &mut streams.init);
    let mut buffer = ReplayBuffer::new(
        config.buffer_capacity,
        config.priority_exponent,
        config.priority_floor,
    );

    let mut record = TrainRecord::default();
    let mut metrics = Vec::with_capacity(config.episodes);
    let mut update_count = 0usize;

    for episode in 0..config.episodes {
        let start = Instant::now();
        let epsilon = config.epsilon_for_episode(episode);
        let mut state = SimState::new(corridor, streams.env_seed(episode))?;
        let mut last_action = JointAction::hold(layout.n_agents);
        let mut spill_history = Vec::with_capacity(config.horizon);
        let mut team_sum = 0.0;
        let mut agent_sums = vec![0.0; layout.n_agents];

        let mut obs = layout.encode(&state, corridor, &last_action)?;
        for t in 0..config.horizon {
            let acting_status = spill_status(&state, corridor, config.force_spillback)?;
            let heads = layout.eval_heads(&nets, &obs)?;
            let action = select_action(&heads, epsilon, &mut streams.explore);
            let reward = advance_decision_interval(&mut state, &action, corridor)?;
            let next_obs = layout.encode(&state, corridor, &action)?;
            let spill_now = spill_status(&state, corridor, config.force_spillback)?.any;

            team_sum += reward.team;
            for (sum, &r) in agent_sums.iter_mut().zip(&reward.per_agent) {
                *sum += r;
            }
            buffer.push(Transition {
                obs: obs.clone(),
                action: action.clone(),
                reward,
                next_obs: next_obs.clone(),
                spillback: acting_status.any,
                terminal: t + 1 == config.horizon,
            });
            spill_history.push(acting_status);
            last_action = action;
            obs = next_obs;

            if (t + 1) % config.update_frequency == 0 {
                for _ in 0..config.updates_per_trigger {
                    let mask = kind.mask_for(spill_now);
                    let loss = run_update(
                        &layout, &mut nets, &mut buffer, config, mask, mode, &mut streams.replay,
                    )?;
                    if !loss.is_finite() {
                        return Err(TrainError::Diverged { episode });
                    }
                    update_count += 1;
                    record.update_losses.push(loss);
                    record.update_masks.push(mask);
                    record.update_spill_flags.push(spill_now);
                    if update_count % config.target_sync_period == 0 {
                        nets.iter_mut().for_each(QNetwork::sync_target);
                    }
                    if hooks.record_digests {
                        record.digests.push(digest_nets(&nets));
                    }
                }
            }
        }

        if let Some(probes) = &hooks.probe_set {
            let mut actions = Vec::with_capacity(probes.len() * layout.n_agents);
            for probe in probes {
                let heads = layout.eval_heads(&nets, probe)?;
                actions.extend(heads.iter().map(|h| argmax(h)));
            }
            record.probe_actions.push(actions);
        }

        metrics.push(EpisodeMetrics {
            episode,
            team_reward: team_sum,
            per_agent: agent_sums,
            measured_rate: episode_rate(&spill_history)?.rate,
            epsilon,
            dropped_arrivals: state.dropped_arrivals,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }

    Ok(TrainOutput {
        nets,
        metrics,
        record,
    })
}

fn run_update(
    layout: &Layout,
    nets: &mut [QNetwork],
    buffer: &mut ReplayBuffer,
    config: &TrainConfig,
    mask: UpdateMask,
    mode: ExecMode,
    replay_rng: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    let indices = buffer.sample_indices(config.batch_size, replay_rng)?;

    // Owned per-net action/reward arrays so the batch views can borrow them.
    let per_net_meta: Vec<Vec<(Vec<usize>, Vec<f64>)>> = layout
        .specs
        .iter()
        .map(|spec| {
            indices
                .iter()
                .map(|&idx| {
                    let tr = buffer.get(idx);
                    let actions = spec
                        .agents
                        .iter()
                        .map(|&a| tr.action.per_agent[a].index())
                        .collect();
                    let rewards = spec.agents.iter().map(|&a| tr.reward.per_agent[a]).collect();
                    (actions, rewards)
                })
                .collect()
        })
        .collect();

    let mut total_deltas = vec![0.0; indices.len()];
    let mut total_loss = 0.0;
    let mut grads = Vec::with_capacity(nets.len());
    for (net_idx, (net, spec)) in nets.iter().zip(&layout.specs).enumerate() {
        let samples: Vec<BatchSample> = indices
            .iter()
            .enumerate()
            .map(|(row, &idx)| {
                let tr = buffer.get(idx);
                let (actions, rewards) = &per_net_meta[net_idx][row];
                BatchSample {
                    obs: &tr.obs[spec.obs_range.clone()],
                    next_obs: &tr.next_obs[spec.obs_range.clone()],
                    actions,
                    rewards,
                    terminal: tr.terminal,
                }
            })
            .collect();
        let result = batch_gradient(net, &samples, config.gamma, mode)?;
        for (total, delta) in total_deltas.iter_mut().zip(&result.joint_deltas) {
            *total += delta;
        }
        total_loss += result.mean_loss;
        grads.push(result.grad);
    }

    // Algorithm step: priorities first, then the masked descent step.
    for (row, &idx) in indices.iter().enumerate() {
        buffer.update_priority(idx, total_deltas[row])?;
    }
    for (net, mut grad) in nets.iter_mut().zip(grads) {
        grad.clip_masked(mask, config.grad_clip_norm);
        net.online.apply_update(&grad, config.learning_rate, mask);
    }
    Ok(total_loss)
}

/// Order-sensitive digest over every network's online and target parameters.
pub fn digest_nets(nets: &[QNetwork]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for net in nets {
        for d in [net.online.digest(), net.target.digest()] {
            h = (h ^ d).wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Greedy rollouts without learning; the networks are immutable by
/// construction.
pub fn evaluate(
    kind: AlgorithmKind,
    nets: &[QNetwork],
    corridor: &CorridorConfig,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<EpisodeMetrics>, TrainError> {
    corridor.validate()?;
    let layout = Layout::new(kind, corridor);
    let env_base = splitmix64(seed);
    let mut metrics = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let start = Instant::now();
        let env_seed = splitmix64(env_base ^ (episode as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let mut state = SimState::new(corridor, env_seed)?;
        let mut last_action = JointAction::hold(layout.n_agents);
        let mut spill_history = Vec::with_capacity(horizon);
        let mut team_sum = 0.0;
        let mut agent_sums = vec![0.0; layout.n_agents];
        for _ in 0..horizon {
            spill_history.push(spill_status(&state, corridor, None)?);
            let obs = layout.encode(&state, corridor, &last_action)?;
            let heads = layout.eval_heads(nets, &obs)?;
            let action = greedy_action(&heads);
            let reward = advance_decision_interval(&mut state, &action, corridor)?;
            team_sum += reward.team;
            for (sum, &r) in agent_sums.iter_mut().zip(&reward.per_agent) {
                *sum += r;
            }
            last_action = action;
        }
        metrics.push(EpisodeMetrics {
            episode,
            team_reward: team_sum,
            per_agent: agent_sums,
            measured_rate: episode_rate(&spill_history)?.rate,
            epsilon: 0.0,
            dropped_arrivals: state.dropped_arrivals,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(metrics)
}

/// Fixed-policy rollouts (every agent holds); used for calibration probing
/// and the `simulate` command.
pub fn rollout_fixed_policy(
    corridor: &CorridorConfig,
    episodes: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<EpisodeMetrics>, TrainError> {
    corridor.validate()?;
    let n = corridor.n_intersections;
    let env_base = splitmix64(seed);
    let mut metrics = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let start = Instant::now();
        let env_seed = splitmix64(env_base ^ (episode as u64).wrapping_mul(0x9E3779B97F4A7C15));
        let mut state = SimState::new(corridor, env_seed)?;
        let mut spill_history = Vec::with_capacity(horizon);
        let mut team_sum = 0.0;
        let mut agent_sums = vec![0.0; n];
        for _ in 0..horizon {
            spill_history.push(spill_status(&state, corridor, None)?);
            let reward = advance_decision_interval(&mut state, &JointAction::hold(n), corridor)?;
            team_sum += reward.team;
            for (sum, &r) in agent_sums.iter_mut().zip(&reward.per_agent) {
                *sum += r;
            }
        }
        metrics.push(EpisodeMetrics {
            episode,
            team_reward: team_sum,
            per_agent: agent_sums,
            measured_rate: episode_rate(&spill_history)?.rate,
            epsilon: 0.0,
            dropped_arrivals: state.dropped_arrivals,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(metrics)
}

/// Mean spill-over rate of hold-policy episodes across seeds; the
/// calibration probe. Episodes fan out in parallel when enabled, folding
/// results in seed order.
pub fn measure_spillover_rate(
    corridor: &CorridorConfig,
    horizon: usize,
    seeds: &[u64],
    mode: ExecMode,
) -> Result<f64, TrainError> {
    let run = |&seed: &u64| -> Result<f64, TrainError> {
        let metrics = rollout_fixed_policy(corridor, 1, horizon, seed)?;
        Ok(metrics[0].measured_rate)
    };
    let rates: Vec<f64> = match mode {
        ExecMode::Sequential => seeds.iter().map(run).collect::<Result<_, _>>()?,
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            seeds.par_iter().map(run).collect::<Result<_, _>>()?
        }
    };
    Ok(rates.iter().sum::<f64>() / rates.len().max(1) as f64)
}

/// Convenience wrappers for the four algorithms.
pub fn train_dpus(config: &TrainConfig, corridor: &CorridorConfig) -> Result<TrainOutput, TrainError> {
    train(AlgorithmKind::Dpus, config, corridor, &TrainHooks::default(), ExecMode::default())
}

pub fn train_in_dqn(config: &TrainConfig, corridor: &CorridorConfig) -> Result<TrainOutput, TrainError> {
    train(AlgorithmKind::InDqn, config, corridor, &TrainHooks::default(), ExecMode::default())
}

pub fn train_cen_dqn(config: &TrainConfig, corridor: &CorridorConfig) -> Result<TrainOutput, TrainError> {
    train(AlgorithmKind::CenDqn, config, corridor, &TrainHooks::default(), ExecMode::default())
}

pub fn train_co_dqn(config: &TrainConfig, corridor: &CorridorConfig) -> Result<TrainOutput, TrainError> {
    train(AlgorithmKind::CoDqn, config, corridor, &TrainHooks::default(), ExecMode::default())
}
