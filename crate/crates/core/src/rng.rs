//! Seed derivation. Every random draw in the crate comes from a ChaCha8
//! stream keyed by a base seed and a purpose-specific path, so that adding a
//! new consumer never perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` and a sequence of path components.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

pub fn stream(base: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, path))
}

/// Purpose tags for [`derive_seed`] paths.
pub mod purpose {
    pub const DATA_SPLIT: u64 = 1;
    pub const TASK_SPLIT: u64 = 2;
    pub const ENCODER_INIT: u64 = 3;
    pub const HEAD_GROW: u64 = 4;
    pub const STAGE1_ORDER: u64 = 5;
    pub const STAGE2_ORDER: u64 = 6;
    pub const EXEMPLARS: u64 = 7;
}
