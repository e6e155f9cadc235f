//! All randomness in the pipeline flows from one run seed, fanned out into
//! independent deterministic streams by hashing the seed with a stream label.
//! Rerunning any stage with the same seed therefore reproduces its artifacts
//! byte for byte, regardless of which other stages ran in between.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hash of the run seed and a sequence of byte strings. Parts are
/// length-prefixed so distinct part lists never collide by concatenation.
pub fn digest(seed: u64, parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

/// Independent RNG for the given stream label.
pub fn stream_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(digest(seed, &[label.as_bytes()]))
}

/// Stable shuffle key: items sorted by `digest` of their identifying parts
/// form a seeded pseudo-random permutation that is insensitive to the items'
/// input order.
pub fn shuffle_key(seed: u64, parts: &[&[u8]]) -> [u8; 32] {
    digest(seed, parts)
}
