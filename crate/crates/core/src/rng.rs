//! Seed derivation and the single RNG type used everywhere.
//!
//! Child seeds are the first eight bytes (big-endian) of
//! SHA-256("{global}\x1f{stage}\x1f{entity}"). The rule is part of the
//! artifact contract: identical configs reproduce identical streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn child_seed(global_seed: u64, stage: &str, entity: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_string().as_bytes());
    hasher.update([0x1f]);
    hasher.update(stage.as_bytes());
    hasher.update([0x1f]);
    hasher.update(entity.as_bytes());
    let digest = hasher.finalize();
    u64::from_be_bytes(digest[..8].try_into().unwrap())
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(global_seed: u64, stage: &str, entity: &str) -> Rng {
    rng_from_seed(child_seed(global_seed, stage, entity))
}

/// Uniform draw from the open interval (-a, a).
pub fn uniform_open(rng: &mut Rng, a: f64) -> f64 {
    use rand::Rng as _;
    loop {
        let v = rng.gen_range(-a..a);
        if v > -a && v < a {
            return v;
        }
    }
}
