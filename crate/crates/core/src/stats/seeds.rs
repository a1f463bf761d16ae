//! Master-seed splitting.
//!
//! The seed of work item `index` under `tag` is the first eight bytes (little
//! endian) of `SHA-256(master_le || tag || index_le)`.

use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("digest has 32 bytes"))
}
