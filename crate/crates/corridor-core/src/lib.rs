//! Corridor traffic control with block-partitioned multi-agent Q-learning.
//!
//! The crate bundles a deterministic cell-based corridor simulator, spill-back
//! detection, a block-partitioned Q-network with hand-derived backprop and
//! masked updates, the training loop with its baselines, and an exact
//! value-iteration oracle for the decentralized/centralized equivalence of
//! uncoupled factored MDPs.
//!
//! Data-parallel inner loops (batch gradients, oracle sweeps, multi-seed
//! evaluation) run on rayon when the default `parallel` feature is enabled
//! and fall back to sequential execution otherwise; both paths produce
//! bit-identical numbers.

pub mod marl;
pub mod qfunction;
pub mod sim;
pub mod spillback;
pub mod theory;
pub mod trainer;

/// Execution strategy for data-parallel inner loops. Both modes are
/// numerically identical; `Parallel` only exists with the `parallel`
/// feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for ExecMode {
    #[cfg(feature = "parallel")]
    fn default() -> Self {
        ExecMode::Parallel
    }

    #[cfg(not(feature = "parallel"))]
    fn default() -> Self {
        ExecMode::Sequential
    }
}
