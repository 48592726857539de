//! Deterministic seed derivation.
//!
//! Every random stream in a run is keyed by `(base seed, tags...)` so that
//! results do not depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

/// Stream tags, one per consumer.
pub mod stream {
    pub const PARTICIPATION: u64 = 1;
    pub const CLIENT_PASS: u64 = 2;
    pub const MASKS: u64 = 3;
    pub const DETECTOR_SET: u64 = 4;
    pub const DETECTOR_TRAIN: u64 = 5;
    pub const DATA: u64 = 6;
    pub const MODEL_INIT: u64 = 7;
    pub const ROLES: u64 = 8;
    pub const PROLIN: u64 = 9;
}
