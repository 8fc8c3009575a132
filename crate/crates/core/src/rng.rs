//! Seed derivation. Every random stream in the pipeline is a ChaCha generator
//! keyed by the master seed plus a purpose tag, so adding a new consumer never
//! shifts an existing stream.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Rng = ChaCha12Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tag: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ mix64(tag)) ^ index)
}

pub fn stream(seed: u64, tag: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive(seed, tag, index))
}

/// Purpose tags for [`stream`].
pub mod tags {
    pub const INIT: u64 = 1;
    pub const GRAMMAR: u64 = 2;
    pub const CORPUS: u64 = 3;
    pub const WARMUP: u64 = 4;
    pub const BATCHES: u64 = 5;
    pub const SELECT: u64 = 6;
    pub const HOLDOUT: u64 = 7;
    pub const FIT: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const PROBE_REF: u64 = 10;
}
