//! Seeded random streams.
//!
//! Every stochastic component draws from a `ChaCha8Rng` derived from a
//! `(master seed, stream id)` pair, so any trace, trial or trajectory can be
//! regenerated in isolation regardless of scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates neighbouring seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a stream label.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(mix(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(seed: u64, stream: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream))
}

/// Named sub-streams used across the crate.
pub mod streams {
    pub const CHANNEL: u64 = 0x11;
    pub const NOISE: u64 = 0x12;
    pub const PHASE: u64 = 0x13;
    pub const LAYOUT: u64 = 0x21;
    pub const PLANNER_INIT: u64 = 0x31;
    pub const PLANNER_TRAIN: u64 = 0x32;
    pub const PLANNER_SAMPLE: u64 = 0x33;
    pub const SAFEGUARD_INIT: u64 = 0x41;
    pub const SAFEGUARD_TRAIN: u64 = 0x42;
    pub const SAFEGUARD_SAMPLE: u64 = 0x43;
    pub const DATASET: u64 = 0x44;
    pub const CLASSIFIER: u64 = 0x51;
    pub const TRIAL: u64 = 0x61;
    pub const FID: u64 = 0x71;
}
