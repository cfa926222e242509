//! Deterministic seed derivation.
//!
//! Every source of randomness in the crate is a [`ChaCha8Rng`] seeded through
//! [`derive_seed`], so a single master seed fixes the whole pipeline: cohort
//! generation, fold partitions, weight init, shuffling and dropout. Sub-seeds
//! are derived by folding context tags (run index, fold index, ...) through
//! splitmix64, which keeps streams independent of thread scheduling and of
//! each other.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from `master` and an ordered list of context tags.
///
/// Distinct tag sequences yield (for practical purposes) independent seeds;
/// the same sequence always yields the same seed.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master ^ 0x6a09_e667_f3bc_c909);
    for &tag in tags {
        state = splitmix64(state ^ splitmix64(tag.wrapping_add(0x1357_9bdf_2468_ace0)));
    }
    state
}

/// A deterministic RNG for the given master seed and context tags.
pub fn rng_from(master: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tags))
}
