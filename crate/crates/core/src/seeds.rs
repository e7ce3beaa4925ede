//! Hierarchical seed derivation.
//!
//! Every random stream in a run is keyed by `(master seed, stage name, index)`
//! and hashed with SHA-256; the first eight digest bytes (little endian) are
//! the stream seed. Streams for different stages or indices are therefore
//! independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive_seed(master: u64, stage: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(stage.as_bytes());
    h.update([0u8]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(master: u64, stage: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, stage, index))
}
