//! Labeled seed derivation.
//!
//! Every random stream in a run is derived from one root seed plus a label
//! such as `"gallery"` or `"decoder/init"`, so adding a new consumer never
//! perturbs the streams of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Derives a child seed from `root` and a label.
pub fn derive(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Derives a child seed for the `index`-th member of a labeled family.
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    derive(derive(root, label), &index.to_string())
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reads the `GMS_SEED` override, if set and parseable.
pub fn env_override() -> Option<u64> {
    std::env::var("GMS_SEED").ok()?.trim().parse().ok()
}
