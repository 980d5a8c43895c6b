//! Deterministic seed derivation.
//!
//! Every random stream in the toolkit is a ChaCha generator keyed by a
//! SHA-256 digest of the parent seed and a purpose label, so that streams
//! never depend on evaluation order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha20Rng;

/// Hashes `(seed, label)` to a 64-bit sub-seed.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update((label.len() as u64).to_le_bytes())
        .chain_update(label.as_bytes())
        .finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Sub-seed for an indexed purpose, e.g. `("trial", 3)`.
pub fn derive_indexed(seed: u64, label: &str, index: u64) -> u64 {
    derive_seed(seed, &format!("{label}/{index}"))
}

pub fn rng_for(seed: u64, label: &str) -> Rng {
    let digest = Sha256::new()
        .chain_update(b"rng")
        .chain_update(seed.to_le_bytes())
        .chain_update(label.as_bytes())
        .finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha20Rng::from_seed(key)
}
