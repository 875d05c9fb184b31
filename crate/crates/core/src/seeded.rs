//! Portable seeded randomness.
//!
//! Every random choice in the harness (tie-breaking in the parent sampler,
//! ranking repair, shuffled initial orders) goes through [`SeededRng`]. The
//! generator is ChaCha8 seeded with `seed_from_u64`, and index draws are done
//! by rejection sampling on raw `next_u64` output, so a given seed yields the
//! same draws on every platform and independently of `rand`'s distribution
//! code.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SeededRng(ChaCha8Rng);

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform index in `0..n`.
    ///
    /// Panics if `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "cannot draw from an empty range");
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.0.next_u64();
            if x >= threshold {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher-Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Removes and returns `k` items drawn uniformly without replacement.
    /// The relative order of the remaining items is not preserved.
    pub fn take<T>(&mut self, pool: &mut Vec<T>, k: usize) -> Vec<T> {
        assert!(k <= pool.len(), "cannot take {k} of {}", pool.len());
        (0..k)
            .map(|_| {
                let idx = self.below(pool.len());
                pool.swap_remove(idx)
            })
            .collect()
    }
}
