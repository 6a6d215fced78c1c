//! Named random streams split from one master seed.
//!
//! Every consumer (initialization, batch shuffling, dropout, data generation)
//! draws from its own stream, so changing one part of a run never perturbs
//! the random numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream(master_seed: u64, name: &str) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    StreamRng::from_seed(seed)
}
