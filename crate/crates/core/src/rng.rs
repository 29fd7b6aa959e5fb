//! Seed derivation. Every stochastic routine takes its seed explicitly; this
//! module turns one scenario seed into independent, reproducible sub-streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives the seed of a named sub-stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for member `index` of an ensemble sharing `seed`.
pub fn stream_rng(seed: u64, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Stream labels used across the crate so that sub-streams never collide.
pub mod streams {
    pub const FITNESS: u64 = 1;
    pub const PRICE: u64 = 2;
    pub const ATTACHMENT: u64 = 3;
    pub const ACTIVITY: u64 = 4;
    pub const FIRM_SDE: u64 = 5;
    pub const COST_JITTER: u64 = 6;
    pub const BOOTSTRAP: u64 = 7;
    pub const MIXTURE: u64 = 8;
}
