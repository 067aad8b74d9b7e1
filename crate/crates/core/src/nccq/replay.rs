//! Uniform experience replay.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;

/// One joint step. `A` is the per-agent action type.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition<A> {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<A>,
    pub reward: f64,
    pub next_obs: Vec<Vec<f64>>,
    pub terminal: bool,
}

/// Fixed-capacity ring; the oldest transition is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<A> {
    capacity: usize,
    items: Vec<Transition<A>>,
    next: usize,
}

impl<A> ReplayBuffer<A> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: Vec::new(),
            next: 0,
        }
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

    pub fn push(&mut self, t: Transition<A>) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `batch` distinct transitions chosen uniformly, or `None` when fewer
    /// are stored.
    pub fn sample(&self, batch: usize, rng: &mut ChaCha8Rng) -> Option<Vec<&Transition<A>>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some(
            index::sample(rng, self.items.len(), batch)
                .into_iter()
                .map(|k| &self.items[k])
                .collect(),
        )
    }
}
