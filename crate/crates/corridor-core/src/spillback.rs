//! Spill-back detection on connecting links.
//!
//! A link spills back when its queue has grown so far upstream that an
//! occupied cell sits within `threshold_cells` of the lane entry, i.e. the
//! congestion is about to block the upstream intersection. Positions are
//! measured as distance from the lane entry, so small positions mean "near
//! the upstream intersection".

use crate::sim::{LaneUpstream, SimError, SimState};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpillbackError {
    #[error("lane {0} is not a connecting link")]
    NotConnecting(usize),
    #[error("threshold {threshold} out of range 1..={cells}")]
    ThresholdOutOfRange { threshold: usize, cells: usize },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("spill-over rate requires a non-empty history")]
    EmptyHistory,
}

/// Per-link spill-back flags for one decision step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpillbackStatus {
    /// (connecting lane id, flag) pairs in lane-id order.
    pub per_link: Vec<(usize, bool)>,
    /// True when any connecting link spills back.
    pub any: bool,
    pub threshold_cells: usize,
}

/// Fraction of decision steps with spill-back present somewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpilloverRate {
    pub decision_steps_total: usize,
    pub decision_steps_with_spillback: usize,
    pub rate: f64,
}

/// Existential form: is any occupied cell within `threshold_cells` of the
/// lane entry?
pub fn detect(state: &SimState, link_id: usize, threshold_cells: usize) -> Result<bool, SpillbackError> {
    let lane = state
        .lanes
        .get(link_id)
        .ok_or(SimError::UnknownLane(link_id))?;
    if !matches!(lane.upstream, LaneUpstream::Intersection(_)) {
        return Err(SpillbackError::NotConnecting(link_id));
    }
    let cells = lane.cells.len();
    if threshold_cells == 0 || threshold_cells > cells {
        return Err(SpillbackError::ThresholdOutOfRange {
            threshold: threshold_cells,
            cells,
        });
    }
    // Cell index 0 is the stop line, so distance-from-entry of cell k is
    // cells - 1 - k; the threshold window is the top of the lane.
    Ok(lane.cells[cells - threshold_cells..].iter().any(|&c| c))
}

/// Max-over-indicators form of the same flag; kept as an independent route
/// so the two formulations can be checked against each other.
pub fn detect_max_form(
    state: &SimState,
    link_id: usize,
    threshold_cells: usize,
) -> Result<bool, SpillbackError> {
    let lane = state
        .lanes
        .get(link_id)
        .ok_or(SimError::UnknownLane(link_id))?;
    if !matches!(lane.upstream, LaneUpstream::Intersection(_)) {
        return Err(SpillbackError::NotConnecting(link_id));
    }
    let cells = lane.cells.len();
    if threshold_cells == 0 || threshold_cells > cells {
        return Err(SpillbackError::ThresholdOutOfRange {
            threshold: threshold_cells,
            cells,
        });
    }
    let max_indicator = lane
        .cells
        .iter()
        .enumerate()
        .filter(|&(_, &occ)| occ)
        .map(|(k, _)| u8::from(cells - 1 - k < threshold_cells))
        .max()
        .unwrap_or(0);
    Ok(max_indicator == 1)
}

/// Evaluates all connecting links of the corridor.
pub fn status(state: &SimState, threshold_cells: usize) -> Result<SpillbackStatus, SpillbackError> {
    let mut per_link = Vec::new();
    for link in state.connecting_lanes() {
        per_link.push((link, detect(state, link, threshold_cells)?));
    }
    let any = per_link.iter().any(|&(_, f)| f);
    Ok(SpillbackStatus {
        per_link,
        any,
        threshold_cells,
    })
}

/// Spill-over rate over a history of statuses sampled at decision boundaries.
pub fn episode_rate(history: &[SpillbackStatus]) -> Result<SpilloverRate, SpillbackError> {
    if history.is_empty() {
        return Err(SpillbackError::EmptyHistory);
    }
    let with = history.iter().filter(|s| s.any).count();
    Ok(SpilloverRate {
        decision_steps_total: history.len(),
        decision_steps_with_spillback: with,
        rate: with as f64 / history.len() as f64,
    })
}
