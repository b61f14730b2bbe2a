//! Deterministic derived RNG streams.
//!
//! Every consumer of randomness in a run derives its own ChaCha stream from
//! the global seed plus a path string (or numeric key), so adding or removing
//! one consumer never perturbs the draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a(init: u64, bytes: &[u8]) -> u64 {
    let mut h = init ^ 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Stream derived from a seed and a path label such as `"rollout/t0/a2"`.
pub fn derive_rng(seed: u64, path: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(rng_key(seed, path))
}

/// The derived seed itself, for callers that need a sub-seed rather than a
/// stream.
pub fn rng_key(seed: u64, path: &str) -> u64 {
    fnv1a(seed, path.as_bytes())
}

/// Stateless stream keyed by numeric parts (e.g. episode, step, primitive).
pub fn keyed_rng(seed: u64, label: &str, parts: &[u64]) -> ChaCha8Rng {
    let mut h = fnv1a(seed, label.as_bytes());
    for &p in parts {
        h = fnv1a(h, &p.to_le_bytes());
    }
    ChaCha8Rng::seed_from_u64(h)
}
