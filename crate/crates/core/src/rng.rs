//! Seed plumbing. Every random stream in the crate is a ChaCha8 generator so
//! results are reproducible across platforms and thread counts.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::RngCore;

pub type GtRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> GtRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed from `(master, stream, index)`.
///
/// Used for per-sample and per-cell seeds in sweeps, so a cell's randomness
/// depends only on its coordinates and not on scheduling.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(index) * 2);
    rng.next_u64()
}
