//! Executable check that decentralized and centralized Q-learning agree on
//! uncoupled factored MDPs, and that a transition coupling (the abstract
//! form of spill-back) breaks that agreement.
//!
//! Everything here is exact tabular computation on small explicit MDPs:
//! value iteration on each factor gives the decentralized Q-tables, value
//! iteration on the product MDP gives the centralized one, and the reports
//! compare them entry by entry.

use crate::ExecMode;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const ROW_SUM_TOLERANCE: f64 = 1e-12;
const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("transition row (state {state}, action {action}) sums to {sum}, not 1")]
    NonStochasticRow { state: usize, action: usize, sum: f64 },
    #[error("transition row (state {state}, action {action}) has a negative entry")]
    NegativeProbability { state: usize, action: usize },
    #[error("tolerance must be positive")]
    BadTolerance,
    #[error("additivity check requires an uncoupled MDP")]
    CoupledInput,
    #[error("coupling-gap check requires a coupling")]
    UncoupledInput,
}

/// One agent's private MDP: `transition[s][a]` is a distribution over next
/// states, `reward[s][a]` a bounded deterministic reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
}

/// Per-agent replacement transition rows applied at specific joint states;
/// `rows[agent][action]` is the replaced distribution over that agent's
/// states. Transitions stay a product of per-agent rows, but the rows now
/// depend on the joint state, which is exactly what breaks factorization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Coupling {
    /// Indexed by flattened joint state; `None` keeps the factored rows.
    pub overrides: Vec<Option<Vec<Vec<Vec<f64>>>>>,
}

/// Two-agent factored MDP with additive rewards and an optional transition
/// coupling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactoredMdp {
    pub agents: Vec<FactorMdp>,
    pub coupling: Option<Coupling>,
    pub gamma: f64,
}

/// Flat tabular MDP fed to the solver.
#[derive(Debug, Clone)]
pub struct ExplicitMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
}

/// Q-values indexed `[state][action]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Vec<Vec<f64>>,
}

impl QTable {
    pub fn greedy(&self, state: usize) -> usize {
        crate::qfunction::argmax(&self.values[state])
    }
}

pub struct ViResult {
    pub q: QTable,
    pub sweeps: usize,
    /// Sup-norm change after each sweep.
    pub deltas: Vec<f64>,
}

/// Synchronous value iteration to sup-norm `tolerance`.
pub fn value_iterate(mdp: &ExplicitMdp, tolerance: f64) -> Result<ViResult, TheoryError> {
    if tolerance <= 0.0 {
        return Err(TheoryError::BadTolerance);
    }
    validate_rows(&mdp.transition)?;
    let mut q = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
    let mut deltas = Vec::new();
    for sweep in 1..=MAX_SWEEPS {
        let state_max: Vec<f64> = q
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut delta = 0.0_f64;
        let mut next = vec![vec![0.0; mdp.n_actions]; mdp.n_states];
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let mut value = mdp.reward[s][a];
                for (s_next, &p) in mdp.transition[s][a].iter().enumerate() {
                    if p != 0.0 {
                        value += mdp.gamma * p * state_max[s_next];
                    }
                }
                delta = delta.max((value - q[s][a]).abs());
                next[s][a] = value;
            }
        }
        q = next;
        deltas.push(delta);
        if delta < tolerance {
            return Ok(ViResult {
                q: QTable { values: q },
                sweeps: sweep,
                deltas,
            });
        }
    }
    // γ < 1 contracts, so this is unreachable for valid inputs.
    Ok(ViResult {
        q: QTable { values: q },
        sweeps: MAX_SWEEPS,
        deltas,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct ContractionCheck {
    pub pass: bool,
    pub worst_ratio: f64,
}

/// Per-sweep contraction of value iteration: each sup-norm delta is at most
/// gamma times the previous one. Deltas below 1e-9 are skipped because the
/// subtraction noise of finished values dominates the measurement there.
pub fn contraction_check(deltas: &[f64], gamma: f64) -> ContractionCheck {
    let mut worst_ratio = 0.0_f64;
    let mut pass = true;
    for pair in deltas.windows(2) {
        if pair[0] <= 1e-9 {
            continue;
        }
        worst_ratio = worst_ratio.max(pair[1] / pair[0]);
        if pair[1] > gamma * pair[0] + 1e-12 {
            pass = false;
        }
    }
    ContractionCheck { pass, worst_ratio }
}

fn validate_rows(transition: &[Vec<Vec<f64>>]) -> Result<(), TheoryError> {
    for (s, per_action) in transition.iter().enumerate() {
        for (a, row) in per_action.iter().enumerate() {
            if row.iter().any(|&p| p < 0.0) {
                return Err(TheoryError::NegativeProbability { state: s, action: a });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(TheoryError::NonStochasticRow { state: s, action: a, sum });
            }
        }
    }
    Ok(())
}

impl FactoredMdp {
    pub fn joint_states(&self) -> usize {
        self.agents.iter().map(|a| a.n_states).product()
    }

    pub fn joint_actions(&self) -> usize {
        self.agents.iter().map(|a| a.n_actions).product()
    }

    /// Flattened joint state index for two agents.
    pub fn joint_state(&self, s1: usize, s2: usize) -> usize {
        s1 * self.agents[1].n_states + s2
    }

    pub fn joint_action(&self, a1: usize, a2: usize) -> usize {
        a1 * self.agents[1].n_actions + a2
    }

    fn split_state(&self, s: usize) -> (usize, usize) {
        let n2 = self.agents[1].n_states;
        (s / n2, s % n2)
    }

    fn split_action(&self, a: usize) -> (usize, usize) {
        let m2 = self.agents[1].n_actions;
        (a / m2, a % m2)
    }

    /// The solver view of one factor, ignoring any coupling.
    pub fn factor_explicit(&self, agent: usize) -> ExplicitMdp {
        let f = &self.agents[agent];
        ExplicitMdp {
            n_states: f.n_states,
            n_actions: f.n_actions,
            transition: f.transition.clone(),
            reward: f.reward.clone(),
            gamma: self.gamma,
        }
    }

    /// The product MDP with additive rewards, applying coupling overrides
    /// where present.
    pub fn joint_explicit(&self) -> ExplicitMdp {
        assert_eq!(self.agents.len(), 2, "the oracle instantiates two agents");
        let ns = self.joint_states();
        let na = self.joint_actions();
        let mut transition = vec![vec![Vec::new(); na]; ns];
        let mut reward = vec![vec![0.0; na]; ns];
        for s in 0..ns {
            let (s1, s2) = self.split_state(s);
            let overrides = self
                .coupling
                .as_ref()
                .and_then(|c| c.overrides[s].as_ref());
            for a in 0..na {
                let (a1, a2) = self.split_action(a);
                reward[s][a] = self.agents[0].reward[s1][a1] + self.agents[1].reward[s2][a2];
                let row1 = overrides
                    .map(|o| &o[0][a1])
                    .unwrap_or(&self.agents[0].transition[s1][a1]);
                let row2 = overrides
                    .map(|o| &o[1][a2])
                    .unwrap_or(&self.agents[1].transition[s2][a2]);
                let mut row = vec![0.0; ns];
                for (t1, &p1) in row1.iter().enumerate() {
                    if p1 == 0.0 {
                        continue;
                    }
                    for (t2, &p2) in row2.iter().enumerate() {
                        row[self.joint_state(t1, t2)] = p1 * p2;
                    }
                }
                transition[s][a] = row;
            }
        }
        ExplicitMdp {
            n_states: ns,
            n_actions: na,
            transition,
            reward,
            gamma: self.gamma,
        }
    }
}

/// Outcome of the additivity check on one uncoupled instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdditivityReport {
    pub max_discrepancy: f64,
    /// Joint (state, action) attaining the maximum.
    pub witness: (usize, usize),
    pub pass: bool,
    pub vi_sweeps: usize,
}

/// Solves the factors and the product exactly and reports
/// `max |Q_cen - (Q_1 + Q_2)|` over every joint state-action pair.
pub fn check_additivity(
    mdp: &FactoredMdp,
    vi_tolerance: f64,
    pass_tolerance: f64,
) -> Result<AdditivityReport, TheoryError> {
    if mdp.coupling.is_some() {
        return Err(TheoryError::CoupledInput);
    }
    let dec1 = value_iterate(&mdp.factor_explicit(0), vi_tolerance)?;
    let dec2 = value_iterate(&mdp.factor_explicit(1), vi_tolerance)?;
    let joint = mdp.joint_explicit();
    let cen = value_iterate(&joint, vi_tolerance)?;
    let (max_discrepancy, witness) = max_gap(mdp, &cen.q, &dec1.q, &dec2.q);
    Ok(AdditivityReport {
        max_discrepancy,
        witness,
        pass: max_discrepancy < pass_tolerance,
        vi_sweeps: cen.sweeps,
    })
}

/// Outcome of the coupling-gap check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingGapReport {
    pub max_gap: f64,
    pub witness: (usize, usize),
    /// Centralized greedy joint action differs from the product of the
    /// decentralized greedy actions somewhere.
    pub policy_differs: bool,
    pub states_with_policy_difference: usize,
}

/// Same discrepancy computation on a coupled instance; the decentralized
/// tables deliberately ignore the coupling, so the gap isolates exactly
/// what the coupling contributes.
pub fn check_coupling_gap(
    mdp: &FactoredMdp,
    vi_tolerance: f64,
) -> Result<CouplingGapReport, TheoryError> {
    if mdp.coupling.is_none() {
        return Err(TheoryError::UncoupledInput);
    }
    let dec1 = value_iterate(&mdp.factor_explicit(0), vi_tolerance)?;
    let dec2 = value_iterate(&mdp.factor_explicit(1), vi_tolerance)?;
    let cen = value_iterate(&mdp.joint_explicit(), vi_tolerance)?;
    let (max_gap, witness) = max_gap(mdp, &cen.q, &dec1.q, &dec2.q);
    let mut states_with_policy_difference = 0;
    for s in 0..mdp.joint_states() {
        let (s1, s2) = mdp.split_state(s);
        let product = mdp.joint_action(dec1.q.greedy(s1), dec2.q.greedy(s2));
        if cen.q.greedy(s) != product {
            states_with_policy_difference += 1;
        }
    }
    Ok(CouplingGapReport {
        max_gap,
        witness,
        policy_differs: states_with_policy_difference > 0,
        states_with_policy_difference,
    })
}

fn max_gap(mdp: &FactoredMdp, cen: &QTable, dec1: &QTable, dec2: &QTable) -> (f64, (usize, usize)) {
    let mut max_discrepancy = 0.0;
    let mut witness = (0, 0);
    for s in 0..mdp.joint_states() {
        let (s1, s2) = mdp.split_state(s);
        for a in 0..mdp.joint_actions() {
            let (a1, a2) = mdp.split_action(a);
            let gap =
                (cen.values[s][a] - (dec1.values[s1][a1] + dec2.values[s2][a2])).abs();
            if gap > max_discrepancy {
                max_discrepancy = gap;
                witness = (s, a);
            }
        }
    }
    (max_discrepancy, witness)
}

/// Uniform-simplex transition rows and rewards in [-1, 0], matching the
/// sign convention of the traffic reward.
pub fn random_uncoupled<R: Rng>(rng: &mut R, max_states: usize, max_actions: usize, gamma: f64) -> FactoredMdp {
    let mut agents = Vec::with_capacity(2);
    for _ in 0..2 {
        let n_states = rng.gen_range(2..=max_states.max(2));
        let n_actions = rng.gen_range(2..=max_actions.max(2));
        let mut transition = Vec::with_capacity(n_states);
        let mut reward = Vec::with_capacity(n_states);
        for _ in 0..n_states {
            let mut rows = Vec::with_capacity(n_actions);
            let mut rewards_row = Vec::with_capacity(n_actions);
            for _ in 0..n_actions {
                rows.push(random_simplex_row(rng, n_states));
                rewards_row.push(-rng.gen::<f64>());
            }
            transition.push(rows);
            reward.push(rewards_row);
        }
        agents.push(FactorMdp {
            n_states,
            n_actions,
            transition,
            reward,
        });
    }
    FactoredMdp {
        agents,
        coupling: None,
        gamma,
    }
}

fn random_simplex_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    // Exponential draws normalized to the flat Dirichlet.
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// The frozen coupled instance used by the gap check: each agent walks a
/// two-state free/congested chain, and while agent 0 is congested, agent 1
/// is stuck in place no matter what it plays. Computed once and pinned:
/// solving it exactly gives a gap above 0.1 and at least one joint state
/// where the centralized greedy action differs from the decentralized
/// product.
pub fn canonical_coupled_instance(gamma: f64) -> FactoredMdp {
    // States: 0 = free, 1 = congested. Actions: 0 = go, 1 = stop.
    let agent = |go_jam: f64, stay_jam: f64, r_go_free: f64, r_stop_free: f64| FactorMdp {
        n_states: 2,
        n_actions: 2,
        transition: vec![
            vec![
                vec![1.0 - go_jam, go_jam], // free, go
                vec![1.0, 0.0],             // free, stop
            ],
            vec![
                vec![1.0 - stay_jam, stay_jam], // congested, go
                vec![0.5, 0.5],                 // congested, stop
            ],
        ],
        reward: vec![
            vec![r_go_free, r_stop_free],
            vec![-1.0, -1.0], // congested is bad whatever you do
        ],
    };
    // Agent 0 congests easily; agent 1's "go" is risky on its own.
    let agents = vec![
        agent(0.6, 0.9, 0.0, -0.4),
        agent(0.9, 0.9, 0.0, -0.3),
    ];

    // While agent 0 is congested, agent 1 cannot move: both of its actions
    // keep its current state, so playing "go" costs nothing.
    let n2 = agents[1].n_states;
    let joint_states = agents[0].n_states * n2;
    let mut overrides = vec![None; joint_states];
    for s2 in 0..n2 {
        let s = 1 * n2 + s2; // agent 0 congested
        let freeze_row = |state: usize| {
            let mut row = vec![0.0; n2];
            row[state] = 1.0;
            row
        };
        let agent0_rows = agents[0].transition[1].clone();
        let agent1_rows = vec![freeze_row(s2), freeze_row(s2)];
        overrides[s] = Some(vec![agent0_rows, agent1_rows]);
    }

    FactoredMdp {
        agents,
        coupling: Some(Coupling { overrides }),
        gamma,
    }
}

/// Configuration of a randomized additivity sweep.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub instances: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub gamma: f64,
    pub vi_tolerance: f64,
    pub pass_tolerance: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            instances: 20,
            max_states: 4,
            max_actions: 3,
            gamma: 0.9,
            vi_tolerance: 1e-12,
            pass_tolerance: 1e-8,
            seed: 20_240_101,
        }
    }
}

/// Runs the additivity check on independently generated instances; results
/// come back in instance order regardless of the execution mode.
pub fn additivity_sweep(
    config: &SweepConfig,
    mode: ExecMode,
) -> Result<Vec<AdditivityReport>, TheoryError> {
    let run = |index: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(index as u64));
        let mdp = random_uncoupled(&mut rng, config.max_states, config.max_actions, config.gamma);
        check_additivity(&mdp, config.vi_tolerance, config.pass_tolerance)
    };
    match mode {
        ExecMode::Sequential => (0..config.instances).map(run).collect(),
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..config.instances).into_par_iter().map(run).collect()
        }
    }
}
