//! Seed plumbing. Every random stream in a run is a ChaCha8 generator whose
//! seed is derived from the single experiment seed plus a stream label.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of stream tags (device id, round, ...).
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, tags: &[u64]) -> SimRng {
    rng_from_seed(derive_seed(base, tags))
}

/// Stream labels, so that independent consumers never share a seed.
pub mod stream {
    pub const SHARD: u64 = 1;
    pub const INIT: u64 = 2;
    pub const OPTIMIZER: u64 = 3;
    pub const PARAM_NOISE: u64 = 4;
    pub const QKD: u64 = 5;
    pub const DP_PCA: u64 = 6;
    pub const SERVER: u64 = 7;
    pub const CONDENSE: u64 = 8;
    pub const SHOTS: u64 = 9;
}
