//! Content hashing shared by ids, caches and manifests.

use sha2::{Digest, Sha256};

/// SHA-256 over length-prefixed parts, so `["ab", "c"]` and `["a", "bc"]`
/// hash differently.
pub fn digest_parts(parts: &[&[u8]]) -> String {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
