//! Seed derivation.
//!
//! Every random stream in the pipeline is keyed by a stable hash of
//! `(parent seed, label, indices)` so that parallel execution order and
//! changes to unrelated stages never reshuffle a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derive a child seed from a parent seed and a stage label.
pub fn derive(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    first_u64(&h.finalize())
}

/// Derive a child seed from a parent seed and a tuple of indices
/// (unit id, draw number, ...).
pub fn derive_indexed(parent: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update((label.len() as u64).to_le_bytes());
    h.update(label.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    first_u64(&h.finalize())
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(parent: u64, label: &str, indices: &[u64]) -> Rng {
    rng(derive_indexed(parent, label, indices))
}

fn first_u64(digest: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        assert_eq!(derive(7, "synth"), derive(7, "synth"));
        assert_ne!(derive(7, "synth"), derive(7, "labeling"));
        assert_ne!(derive(7, "synth"), derive(8, "synth"));
        assert_ne!(
            derive_indexed(1, "eval", &[3, 0]),
            derive_indexed(1, "eval", &[0, 3])
        );
    }
}
