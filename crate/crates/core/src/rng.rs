//! Deterministic random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type DetRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> DetRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent sub-seed for `(seed, tag)`, so per-item streams do not depend
/// on processing order.
pub fn derive_seed(seed: u64, tag: &[u8]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag);
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}
