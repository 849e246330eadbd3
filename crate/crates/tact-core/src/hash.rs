//! Content hashing used to bind episodes, checkpoints and reports to the
//! configuration that produced them.

use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        use std::fmt::Write;
        write!(out, "{b:02x}").unwrap();
    }
    out
}

/// Hash of a serializable value via its canonical JSON encoding.
pub fn hash_json<T: serde::Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("hashable values serialize");
    sha256_hex(json.as_bytes())
}
