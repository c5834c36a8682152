//! FIFO replay buffer of completed environment steps.
//!
//! A [`Transition`] stores the post-step history; the pre-step history, the
//! executed design, and the step index are all views into it, which keeps
//! the buffer compact and makes the (prev, design, next) consistency
//! structural rather than a runtime invariant. Parameters are deliberately
//! absent: nothing sampled from the buffer can leak them to the learner.

use rand::{Rng, RngExt};

use crate::env::History;
use crate::error::CoreError;

/// One environment step: the trajectory's history right after the step,
/// the reward it earned, and whether it ended the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    history: History,
    reward: f64,
    done: bool,
    trajectory: u64,
}

impl Transition {
    pub fn new(history: History, reward: f64, done: bool, trajectory: u64) -> Self {
        assert!(!history.is_empty());
        assert!(reward.is_finite());
        Transition {
            history,
            reward,
            done,
            trajectory,
        }
    }

    /// Encoded history before the step.
    pub fn encode_prev(&self) -> Vec<f64> {
        self.history.encode_prefix(self.history.len() - 1)
    }

    /// Encoded history after the step.
    pub fn encode_next(&self) -> Vec<f64> {
        self.history.encode()
    }

    /// The design executed by the step.
    pub fn design(&self) -> &[f64] {
        self.history.design_at(self.history.len() - 1)
    }

    pub fn next_history(&self) -> &History {
        &self.history
    }

    pub fn reward(&self) -> f64 {
        self.reward
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn trajectory(&self) -> u64 {
        self.trajectory
    }
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Transition>,
    write: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            slots: Vec::new(),
            write: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Appends, evicting the oldest transition once full.
    pub fn push(&mut self, transition: Transition) {
        if self.slots.len() < self.capacity {
            self.slots.push(transition);
        } else {
            self.slots[self.write] = transition;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    /// `batch` independent uniform draws, with replacement.
    pub fn sample(
        &self,
        batch: usize,
        rng: &mut dyn Rng,
    ) -> Result<Vec<&Transition>, CoreError> {
        if self.is_empty() {
            return Err(CoreError::contract("sample from an empty replay buffer"));
        }
        Ok((0..batch)
            .map(|_| &self.slots[rng.random_range(0..self.slots.len())])
            .collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.slots.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn transition(tag: f64) -> Transition {
        let mut h = History::new(2, 1, 1);
        h.push(&[tag], &[tag + 0.5]).unwrap();
        Transition::new(h, tag, false, tag as u64)
    }

    #[test]
    fn push_past_capacity_evicts_the_oldest() {
        let mut buffer = ReplayBuffer::new(3);
        for tag in 0..4 {
            buffer.push(transition(tag as f64));
        }
        assert_eq!(buffer.len(), 3);
        let tags: Vec<f64> = buffer.iter().map(|t| t.reward()).collect();
        assert!(!tags.contains(&0.0));
        for tag in [1.0, 2.0, 3.0] {
            assert!(tags.contains(&tag));
        }
    }

    #[test]
    fn sampling_from_empty_buffer_is_a_contract_error() {
        let buffer = ReplayBuffer::new(4);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        assert!(matches!(
            buffer.sample(1, &mut rng),
            Err(CoreError::Contract(_))
        ));
    }

    #[test]
    fn transitions_round_trip_bit_exactly() {
        let mut buffer = ReplayBuffer::new(2);
        let original = transition(0.1234567890123);
        buffer.push(original.clone());
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let sampled = buffer.sample(1, &mut rng).unwrap();
        assert_eq!(*sampled[0], original);
    }

    #[test]
    fn sampling_is_uniform_over_the_buffer() {
        let mut buffer = ReplayBuffer::new(10);
        for tag in 0..10 {
            buffer.push(transition(tag as f64));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let n = 100_000;
        let mut counts = [0usize; 10];
        for t in buffer.sample(n, &mut rng).unwrap() {
            counts[t.trajectory() as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 0.1).abs() < 0.01, "frequency {freq}");
        }
    }

    #[test]
    fn prev_design_next_views_are_consistent() {
        let mut h = History::new(3, 2, 1);
        h.push(&[1.0, 2.0], &[3.0]).unwrap();
        h.push(&[4.0, 5.0], &[6.0]).unwrap();
        let t = Transition::new(h.clone(), 0.5, false, 7);
        assert_eq!(t.encode_prev(), h.prefix(1).encode());
        assert_eq!(t.encode_next(), h.encode());
        assert_eq!(t.design(), &[4.0, 5.0]);
    }
}
