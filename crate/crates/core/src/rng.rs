//! The single seeded generator type used throughout the crate.
//!
//! Everything that samples takes `&mut SeededRng` explicitly; there is no
//! global or thread-local generator anywhere.

use rand::SeedableRng;
use sha2::{Digest, Sha256};

pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    SeededRng::seed_from_u64(seed)
}

/// Derives a child seed from a base seed and a list of labels.
///
/// Stable across platforms and releases (SHA-256 of a canonical string).
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
