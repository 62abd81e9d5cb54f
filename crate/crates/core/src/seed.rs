//! Seed derivation and the random stream type used everywhere.
//!
//! Every stochastic step draws from a ChaCha8 stream whose 64-bit seed is
//! derived from `(master, label, index)` with SHA-256. ChaCha8 output and
//! `seed_from_u64` expansion are specified by `rand_chacha`/`rand_core` and do
//! not depend on platform or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Deterministic stream seed for a pipeline stage.
///
/// The label is length-prefixed so that `("ab", 1)` and `("a", ...)` can
/// never hash the same byte string.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(master: u64, label: &str, index: u64) -> Stream {
    stream(derive_seed(master, label, index))
}
