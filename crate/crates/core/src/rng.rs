//! Seeded random streams.
//!
//! All randomness goes through ChaCha8 so results match across platforms.
//! Independent streams are derived by hashing a label into the seed, which
//! keeps per-caption draws stable regardless of processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn from_seed(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a stream from `seed` and an arbitrary byte label.
pub fn derive(seed: u64, label: &[u8]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label);
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
