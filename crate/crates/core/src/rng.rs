//! Seeded, reproducible randomness.
//!
//! Every random choice in the crate flows from a [`SeededRng`]. Parallel
//! work derives one child generator per work item from `(seed, indices)`,
//! so results never depend on how items are scheduled across threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seed used when the caller does not provide one.
pub const DEFAULT_SEED: u64 = 0x5EED_F00D_2020;

#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator for a work item addressed by `path`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        Self::new(derive_seed(seed, path))
    }

    /// Child of this generator's seed; does not advance `self`.
    pub fn child(&self, path: &[u64]) -> Self {
        Self::derive(self.seed, path)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a path of indices into a new seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ 0xA076_1D64_78BD_642F);
    for (depth, &p) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(p.wrapping_add((depth as u64 + 1) << 56)));
    }
    h
}
