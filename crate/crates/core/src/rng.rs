//! Keyed random streams.
//!
//! Every random draw is taken from a ChaCha stream whose key is derived from
//! `(seed, subject id, step index)`. A stream depends only on its key, never
//! on how many other streams were consumed before it, so results do not
//! change with worker count or processing order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type KeyedRng = ChaCha8Rng;

pub fn keyed_rng(seed: u64, subject: &str, step: usize) -> KeyedRng {
    let mut hasher = Sha256::new();
    hasher.update(b"detbench-rng-v1");
    hasher.update(seed.to_le_bytes());
    hasher.update((step as u64).to_le_bytes());
    hasher.update(subject.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
