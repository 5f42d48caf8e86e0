//! Prioritized replay with proportional sampling.
//!
//! Entry `k` is drawn with probability proportional to
//! `(priority_k + priority_floor) ^ priority_exponent`. No importance
//! sampling correction is applied; priorities are plain `|TD error|`.

use crate::marl::Transition;
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot sample from an empty buffer")]
    Empty,
    #[error("priority index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Transition>,
    priorities: Vec<f64>,
    /// Ring insert position, valid once the buffer is full.
    next: usize,
    pub priority_exponent: f64,
    pub priority_floor: f64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, priority_exponent: f64, priority_floor: f64) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            capacity,
            entries: Vec::with_capacity(capacity.min(4096)),
            priorities: Vec::with_capacity(capacity.min(4096)),
            next: 0,
            priority_exponent,
            priority_floor,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, index: usize) -> &Transition {
        &self.entries[index]
    }

    pub fn priority(&self, index: usize) -> f64 {
        self.priorities[index]
    }

    /// Inserts at the current max priority (1.0 on an empty buffer), so new
    /// transitions are sampled at least once with decent odds. Evicts the
    /// oldest entry when full.
    pub fn push(&mut self, transition: Transition) {
        let priority = self
            .priorities
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        let priority = if priority.is_finite() && !self.priorities.is_empty() {
            priority
        } else {
            1.0
        };
        if self.entries.len() < self.capacity {
            self.entries.push(transition);
            self.priorities.push(priority);
        } else {
            self.entries[self.next] = transition;
            self.priorities[self.next] = priority;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    /// Draws `batch_size` indices with replacement, proportional to the
    /// exponentiated priorities. Falls back to uniform when every weight is
    /// zero (all priorities zero with a zero floor).
    pub fn sample_indices<R: Rng>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>, ReplayError> {
        if self.entries.is_empty() {
            return Err(ReplayError::Empty);
        }
        let mut cumulative = Vec::with_capacity(self.priorities.len());
        let mut total = 0.0;
        for &p in &self.priorities {
            total += (p + self.priority_floor).powf(self.priority_exponent);
            cumulative.push(total);
        }
        let mut indices = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let u: f64 = rng.gen();
            let index = if total > 0.0 {
                let point = u * total;
                cumulative.partition_point(|&c| c <= point)
            } else {
                (u * self.entries.len() as f64) as usize
            };
            indices.push(index.min(self.entries.len() - 1));
        }
        Ok(indices)
    }

    /// p_k ← |δ| (assignment, not accumulation).
    pub fn update_priority(&mut self, index: usize, td_error: f64) -> Result<(), ReplayError> {
        if index >= self.priorities.len() {
            return Err(ReplayError::IndexOutOfRange {
                index,
                len: self.priorities.len(),
            });
        }
        self.priorities[index] = td_error.abs();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::{JointAction, RewardVector, Transition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn transition(tag: f64) -> Transition {
        Transition {
            obs: vec![tag],
            action: JointAction::hold(1),
            reward: RewardVector::new(vec![0.0]),
            next_obs: vec![tag],
            spillback: false,
            terminal: false,
        }
    }

    #[test]
    fn capacity_is_a_hard_bound_with_fifo_eviction() {
        let mut buffer = ReplayBuffer::new(3, 0.6, 1e-3);
        for k in 0..5 {
            buffer.push(transition(k as f64));
        }
        assert_eq!(buffer.len(), 3);
        let tags: Vec<f64> = (0..3).map(|k| buffer.get(k).obs[0]).collect();
        assert_eq!(tags, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn priority_updates_assign_absolute_value() {
        let mut buffer = ReplayBuffer::new(4, 0.6, 1e-3);
        buffer.push(transition(0.0));
        buffer.update_priority(0, -4.2).unwrap();
        assert_eq!(buffer.priority(0), 4.2);
        buffer.update_priority(0, 0.0).unwrap();
        assert_eq!(buffer.priority(0), 0.0);
        buffer.update_priority(0, 1.5).unwrap();
        buffer.update_priority(0, 2.5).unwrap();
        assert_eq!(buffer.priority(0), 2.5, "overwrite, not accumulate");
        assert!(buffer.update_priority(7, 1.0).is_err());
    }

    #[test]
    fn zero_priority_with_zero_floor_is_never_sampled() {
        let mut buffer = ReplayBuffer::new(4, 1.0, 0.0);
        buffer.push(transition(0.0));
        buffer.push(transition(1.0));
        buffer.update_priority(0, 0.0).unwrap();
        buffer.update_priority(1, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let indices = buffer.sample_indices(1000, &mut rng).unwrap();
        assert!(indices.iter().all(|&i| i == 1));
    }

    #[test]
    fn zero_exponent_means_uniform_sampling() {
        let mut buffer = ReplayBuffer::new(4, 0.0, 1e-3);
        for k in 0..4 {
            buffer.push(transition(k as f64));
        }
        buffer.update_priority(3, 1000.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let indices = buffer.sample_indices(40_000, &mut rng).unwrap();
        let mut counts = [0usize; 4];
        for i in indices {
            counts[i] += 1;
        }
        for &c in &counts {
            let expected = 10_000.0;
            let sigma = (40_000.0_f64 * 0.25 * 0.75).sqrt();
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "counts {counts:?}");
        }
    }

    #[test]
    fn empty_buffer_sampling_is_an_error() {
        let buffer = ReplayBuffer::new(4, 0.6, 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            buffer.sample_indices(1, &mut rng),
            Err(ReplayError::Empty)
        ));
    }

    #[test]
    fn new_entries_inherit_the_running_max_priority() {
        let mut buffer = ReplayBuffer::new(8, 0.6, 1e-3);
        buffer.push(transition(0.0));
        assert_eq!(buffer.priority(0), 1.0);
        buffer.update_priority(0, 7.0).unwrap();
        buffer.push(transition(1.0));
        assert_eq!(buffer.priority(1), 7.0);
    }
}
