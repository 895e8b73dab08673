//! Seeded, splittable random number streams.
//!
//! Every stochastic routine in this crate derives per-replicate seeds with
//! [`child_seed`], so replicates can be evaluated in any order (or in
//! parallel) and still produce bit-identical results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; good avalanche, standard constants.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for stream `index` under `master`.
pub fn child_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(1)))
}

/// RNG seeded directly from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG for child stream `index` under `master`.
pub fn child_rng(master: u64, index: u64) -> ChaCha8Rng {
    rng_from_seed(child_seed(master, index))
}
