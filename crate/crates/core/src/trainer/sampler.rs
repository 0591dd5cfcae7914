use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{KdError, Result};

/// Uniform sampling without replacement within an epoch; the order is
/// reshuffled whenever fewer than a full batch remains.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl EpochSampler {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(KdError::EmptyBatch);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(Self { order, pos: 0, rng })
    }

    /// Next `m` sample indices. Batches larger than the dataset wrap around.
    pub fn next_batch(&mut self, m: usize) -> Vec<usize> {
        let n = self.order.len();
        if m > n {
            return (0..m).map(|k| self.order[k % n]).collect();
        }
        if self.pos + m > n {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let batch = self.order[self.pos..self.pos + m].to_vec();
        self.pos += m;
        batch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_covers_every_sample_once() {
        let mut s = EpochSampler::new(12, 3).unwrap();
        let mut seen: Vec<usize> = (0..3).flat_map(|_| s.next_batch(4)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_in_seed() {
        let mut a = EpochSampler::new(50, 9).unwrap();
        let mut b = EpochSampler::new(50, 9).unwrap();
        for _ in 0..20 {
            assert_eq!(a.next_batch(8), b.next_batch(8));
        }
    }

    #[test]
    fn no_repeats_within_batch() {
        let mut s = EpochSampler::new(10, 0).unwrap();
        for _ in 0..30 {
            let mut b = s.next_batch(7);
            b.sort_unstable();
            b.dedup();
            assert_eq!(b.len(), 7);
        }
    }
}
