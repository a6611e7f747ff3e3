//! Named sub-seeds derived from one root seed.

use sha2::{Digest, Sha256};

/// First 8 bytes (LE) of `SHA-256(root_le ‖ label)`.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
