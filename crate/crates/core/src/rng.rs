//! Deterministic stream derivation: every parallelizable unit of work gets
//! its own ChaCha stream keyed by the experiment seed and a tag path.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the tag path, mixed with the base seed.
pub fn derive_seed(seed: u64, tags: &[&str]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for tag in tags {
        for b in tag.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_rng(seed: u64, tags: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tags))
}
