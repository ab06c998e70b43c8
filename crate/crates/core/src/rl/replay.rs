use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub phi: Tensor,
    pub action: usize,
    pub reward: Float,
    /// Stored even for terminal transitions; the target ignores it then.
    pub phi_next: Tensor,
    pub terminal: bool,
}

/// Fixed-capacity FIFO ring of transitions for one environment.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::new(),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// Distinct storage slots drawn uniformly without replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if batch > self.items.len() || batch == 0 {
            return Err(Error::InsufficientSamples {
                size: self.items.len(),
                batch,
            });
        }
        Ok(rand::seq::index::sample(rng, self.items.len(), batch).into_vec())
    }

    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch, rng)?
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }

    pub fn get(&self, slot: usize) -> Option<&Transition> {
        self.items.get(slot)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(i: usize) -> Transition {
        Transition {
            phi: Tensor::scalar(i as Float),
            action: 0,
            reward: i as Float,
            phi_next: Tensor::scalar(0.0),
            terminal: false,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = ReplayBuffer::new(2);
        for i in 1..=3 {
            b.push(tr(i));
        }
        let rewards: Vec<Float> = b.iter().map(|t| t.reward).collect();
        assert_eq!(rewards, vec![2.0, 3.0]);
    }

    #[test]
    fn single_item_sample() {
        let mut b = ReplayBuffer::new(4);
        b.push(tr(7));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = b.sample(1, &mut rng).unwrap();
        assert_eq!(s[0], &tr(7));
    }

    #[test]
    fn under_capacity_size() {
        let mut b = ReplayBuffer::new(1 << 20);
        for i in 0..10_000 {
            b.push(tr(i));
        }
        assert_eq!(b.len(), 10_000);
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let mut b = ReplayBuffer::new(512);
        for i in 0..512 {
            b.push(tr(i));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut idx = b.sample_indices(512, &mut rng).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..512).collect::<Vec<_>>());
    }

    #[test]
    fn sampling_more_than_stored_fails() {
        let mut b = ReplayBuffer::new(8);
        b.push(tr(0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            b.sample(2, &mut rng),
            Err(Error::InsufficientSamples { size: 1, batch: 2 })
        ));
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..100 {
            b.push(tr(i));
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..5)
                .map(|_| b.sample_indices(10, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(11), draw(11));
        assert_ne!(draw(11), draw(12));
    }
}
