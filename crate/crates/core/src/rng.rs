//! Seeded RNG construction. All stochastic code in this crate draws from
//! ChaCha12 streams, so a (seed, label) pair fully determines a run.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// RNG used across the crate.
pub type Chacha = ChaCha12Rng;

/// Root stream for a seed.
pub fn chacha(seed: u64) -> Chacha {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Independent stream addressed by a label; the label is hashed with FNV-1a
/// (std's hasher is not stable across builds).
pub fn substream(seed: u64, label: &str) -> Chacha {
    let mut r = ChaCha12Rng::seed_from_u64(seed);
    r.set_stream(fnv1a(label.as_bytes()));
    r
}

/// FNV-1a, used wherever a stable string-to-integer map is needed.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}
