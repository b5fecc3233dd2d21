//! Deterministic seed derivation. Every randomized stage derives its own
//! seed by hashing the master seed together with a path of context labels,
//! so results are independent of execution order and safe to parallelize.

use sha2::{Digest, Sha256};

/// Derives a child seed from `master` and an ordered list of context parts
/// (study id, variant, model id, trial index, stage name, …).
pub fn derive(master: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    for part in parts {
        // Length-prefix each part so ["ab","c"] and ["a","bc"] differ.
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}
