//! Seed derivation for reproducible parallel streams.
//!
//! Replication `r` of a run with base seed `s` uses the stream seeded by
//! `splitmix64(s + r * GOLDEN)`. The map `r -> s + r * GOLDEN` is injective
//! modulo 2^64 because `GOLDEN` is odd, and `splitmix64` is a bijection, so
//! distinct replications always get distinct seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `index` under `base`.
pub fn stream_seed(base: u64, index: u64) -> u64 {
    splitmix64(base.wrapping_add(index.wrapping_mul(GOLDEN)))
}

/// Generator used for a single trajectory.
pub fn generator(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
