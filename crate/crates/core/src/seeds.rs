//! Named sub-seeds and the crate-wide RNG type.
//!
//! Every stage draws from its own stream, derived by hashing the run seed
//! with a stage label, so changing how much randomness one stage consumes
//! never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub const BASELINE: &str = "baseline";
pub const FALSIFIER: &str = "falsifier";
pub const MINIBATCH: &str = "minibatch";
pub const INIT: &str = "init";
pub const CRITIC_DATA: &str = "critic-data";
pub const CRITIC_FIT: &str = "critic-fit";
pub const EVALUATION: &str = "evaluation";
pub const REMOVAL: &str = "removal";

/// Derive a stage seed from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Derive a seed for the `index`-th use of a stage (outer iteration, retry, ...).
pub fn derive_indexed(base: u64, label: &str, index: u64) -> u64 {
    derive_seed(derive_seed(base, label), &index.to_string())
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
