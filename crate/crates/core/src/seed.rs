//! Deterministic seed derivation.
//!
//! Every stochastic component draws from a ChaCha stream seeded by mixing a
//! parent seed with a stable string key, so results never depend on the
//! order in which jobs run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and `key`.
pub fn mix_seed(seed: u64, key: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in key.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(splitmix64(seed) ^ h)
}

pub fn rng_for(seed: u64, key: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, key))
}

/// Uniform draw in `[0, 1)` determined by `(seed, key)` alone.
pub fn unit_draw(seed: u64, key: &str) -> f64 {
    (mix_seed(seed, key) >> 11) as f64 / (1u64 << 53) as f64
}
