//! Seed derivation and the per-run random stream.
//!
//! Every run draws all of its randomness (scenario sampling, sensor noise,
//! fault application) from a single ChaCha8 stream seeded by a value derived
//! from the campaign master seed, so any run is reproducible on its own
//! without replaying its predecessors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The single random stream a run owns.
pub type RunRng = ChaCha8Rng;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer (Steele, Lea & Flood). The published mixing function
/// behind all seed derivation in this crate.
pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream namespaces. Kept disjoint so run seeds never collide across kinds.
pub mod stream {
    pub const GOLDEN_BASE: u64 = 0;
    pub const INJECTED_BASE: u64 = 1 << 32;
    pub const PROFILE: u64 = 2 << 32;
    pub const PLAN: u64 = 3 << 32;

    pub fn golden(index: u32) -> u64 {
        GOLDEN_BASE + u64::from(index)
    }

    pub fn injected(index: u32) -> u64 {
        INJECTED_BASE + u64::from(index)
    }
}

/// Derive a run seed from the master seed and a stream id.
pub fn derive_seed(master_seed: u64, stream: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(stream))
}

pub fn rng_from_seed(seed: u64) -> RunRng {
    RunRng::seed_from_u64(seed)
}
