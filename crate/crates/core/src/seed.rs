//! Per-stage random streams derived from one experiment seed.

use sha2::{Digest, Sha256};

/// Mixes `label` into `seed` with SHA-256, giving a stream that is stable
/// across platforms and toolchain versions.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
