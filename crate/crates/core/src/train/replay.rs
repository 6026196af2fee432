use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// One replay record. `prefix` defines the state s_t; `action` and
/// `reward` are the step outcome; `done` marks EOS or the length bound.
/// `reference` conditions the critics in supervised mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub source: Vec<usize>,
    pub prefix: Vec<usize>,
    pub action: usize,
    /// Post-rescale reward.
    pub reward: f64,
    pub done: bool,
    pub reference: Vec<usize>,
}

/// Bounded FIFO store with uniform with-replacement sampling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
    inserted: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
            inserted: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.inserted += 1;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total insertions ever; with `len`, recovers which items survived
    /// FIFO eviction.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// Uniform sample with replacement.
    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<&Transition> {
        assert!(!self.items.is_empty(), "sampling from an empty buffer");
        (0..n)
            .map(|_| &self.items[rng.random_range(0..self.items.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(tag: usize) -> Transition {
        Transition {
            source: vec![tag],
            prefix: vec![],
            action: tag,
            reward: 0.0,
            done: false,
            reference: vec![],
        }
    }

    #[test]
    fn fifo_eviction_at_capacity() {
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(t(i));
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.inserted(), 5);
        // strictly FIFO: items 0 and 1 evicted, order preserved
        let actions: Vec<usize> = (0..3).map(|i| buf.get(i).action).collect();
        assert_eq!(actions, vec![2, 3, 4]);
    }

    #[test]
    fn sampling_is_uniform_chi_square() {
        let mut buf = ReplayBuffer::new(100);
        for i in 0..100 {
            buf.push(t(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let draws = 10_000;
        let mut counts = [0f64; 100];
        for s in buf.sample(draws, &mut rng) {
            counts[s.action] += 1.0;
        }
        let expect = draws as f64 / 100.0;
        let chi2: f64 = counts.iter().map(|c| (c - expect).powi(2) / expect).sum();
        // df = 99, 0.99 quantile = 134.642
        assert!(chi2 < 134.642, "chi2 = {chi2}");
    }
}
