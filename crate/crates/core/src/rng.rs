//! Random stream contract.
//!
//! Every random quantity in the crate comes from a [`ChaCha20Rng`] built with
//! `ChaCha20Rng::seed_from_u64(seed)` (rand_chacha 0.9). A single root seed
//! fans out to independent child seeds through [`derive_seed`]:
//!
//! ```text
//! child(root, i) = root XOR (i + 1) * 0x9E37_79B9_7F4A_7C15   (wrapping)
//! ```
//!
//! so replication `i` of an experiment, or resample `i` of a randomization
//! test, always sees the same bit stream no matter which thread runs it.
//! Uniform variates are `rng.random::<f64>()` (53 random mantissa bits);
//! Bernoulli(p) is `u < p`; normals come from `rand_distr::StandardNormal`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Seed of the `index`-th child stream of `root`.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    root ^ index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)
}

pub fn stream(seed: u64) -> StreamRng {
    ChaCha20Rng::seed_from_u64(seed)
}
