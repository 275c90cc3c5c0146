//! Seed derivation.
//!
//! Every random stream is derived from one master seed: the stream seed is the first
//! eight bytes (little endian) of `SHA-256(master_seed.to_le_bytes() || 0x00 || label)`.
//! Streams are `ChaCha8Rng` seeded with that value through `SeedableRng::seed_from_u64`.
//! Labels are module names (`"split"`) or per-item keys (`"standardize/<source>/<file>"`),
//! so work items can be processed in any order without changing their draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, label: &str) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, label))
}
