//! Portable seeded randomness.
//!
//! Every random draw in the crate comes from [`SplitMix64`], a counter-based
//! 64-bit generator: the state is a Weyl counter advanced by a fixed odd
//! constant and each output is a bijective mix of the counter. Output is
//! identical on every platform, so seeded results (folds, forests, synthetic
//! data) reproduce everywhere.
//!
//! Parallel work units never share a generator. Each unit derives its own
//! stream with [`stream`] from `(seed, unit index)`, which makes serial and
//! parallel execution produce the same numbers.

use rand_core::{impls, RngCore, SeedableRng};

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    counter: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { counter: seed }
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for SplitMix64 {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(GAMMA);
        mix64(self.counter)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

impl SeedableRng for SplitMix64 {
    type Seed = [u8; 8];

    fn from_seed(seed: Self::Seed) -> Self {
        Self::new(u64::from_le_bytes(seed))
    }

    fn seed_from_u64(state: u64) -> Self {
        Self::new(state)
    }
}

/// Seed for an independent sub-stream `index` of `seed`.
pub fn derive(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ 0x5EED_5EED_5EED_5EED).wrapping_add(mix64(index.wrapping_add(GAMMA))))
}

/// Generator for sub-stream `index` of `seed`.
pub fn stream(seed: u64, index: u64) -> SplitMix64 {
    SplitMix64::new(derive(seed, index))
}

/// Stable stream tags for the places that draw randomness, so that adding a
/// consumer never perturbs an existing one.
pub(crate) mod tag {
    pub const FOLDS: u64 = 1;
    pub const FOREST: u64 = 2;
    pub const LOGISTIC: u64 = 3;
    pub const PERMUTATION: u64 = 4;
    pub const PI_SPLIT: u64 = 5;
    pub const SYNTH: u64 = 6;
}
