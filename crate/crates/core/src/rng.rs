//! Named, counter-addressed random streams derived from one master seed.
//!
//! Every consumer asks for `(name, index)` and gets an independent ChaCha
//! generator, so the stream for iteration `t` never depends on how much
//! randomness iteration `t - 1` consumed. Resuming from a checkpoint only
//! needs the master seed and the iteration counter.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn derive_seed(master: u64, name: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn stream(master: u64, name: &str, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(derive_seed(master, name, index))
}

/// A child seed, for APIs that take a plain `u64`.
pub fn child_seed(master: u64, name: &str, index: u64) -> u64 {
    let bytes = derive_seed(master, name, index);
    u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
}
