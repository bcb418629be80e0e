//! Deterministic random-number streams.
//!
//! Every stochastic step in the toolkit (parameter init, data synthesis,
//! batch shuffling) draws from a ChaCha20 stream derived from a master seed
//! plus a stable stream label, so reruns are bit-identical and independent
//! stages never share a stream.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stable 64-bit FNV-1a hash (not `DefaultHasher`, whose output may change
/// across Rust releases).
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// A ChaCha20 stream determined by `(seed, label)`.
pub fn stream(seed: u64, label: &str) -> ChaCha20Rng {
    let tag = fnv1a(label.as_bytes());
    let mut key = [0u8; 32];
    key[0..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&tag.to_le_bytes());
    key[16..24].copy_from_slice(&seed.rotate_left(17).to_le_bytes());
    key[24..32].copy_from_slice(&tag.rotate_left(31).to_le_bytes());
    ChaCha20Rng::from_seed(key)
}

/// Per-item substream, e.g. one per utterance, independent of generation order.
pub fn substream(seed: u64, label: &str, index: u64) -> ChaCha20Rng {
    stream(seed ^ index.wrapping_mul(0x9e3779b97f4a7c15), label)
}

/// Standard normal sample via Box-Muller (avoids a distribution-crate
/// dependency and keeps the exact sampling arithmetic pinned).
pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
