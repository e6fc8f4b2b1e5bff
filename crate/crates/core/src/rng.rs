//! Labeled, reproducible random streams.
//!
//! Every random draw in the crate comes from a [`SeedStream`]. Streams are
//! derived from a parent by hashing a label, so adding a new consumer never
//! perturbs the draws seen by existing ones.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};

/// The generator used everywhere randomness appears.
pub type Rng = Xoshiro256PlusPlus;

/// 64-bit hash that is stable across platforms and toolchains.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn seed(self) -> u64 {
        self.0
    }

    /// Child stream keyed by a label.
    pub fn derive(self, label: &str) -> Self {
        Self(stable_hash(&[&self.0.to_le_bytes(), label.as_bytes()]))
    }

    /// Child stream keyed by an index.
    pub fn derive_index(self, index: u64) -> Self {
        Self(stable_hash(&[&self.0.to_le_bytes(), &index.to_le_bytes()]))
    }

    pub fn rng(self) -> Rng {
        Rng::seed_from_u64(self.0)
    }
}
