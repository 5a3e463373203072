//! Keyed random streams.
//!
//! Every random decision in the engine draws from a ChaCha stream whose seed is
//! a hash of the run seed and a short key path (role, iteration, group, task).
//! Two calls with the same key path see the same stream no matter which thread
//! runs them or in what order they complete.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Role tags mixed into stream keys.
pub mod role {
    pub const EXECUTE: u64 = 1;
    pub const REFLECT: u64 = 2;
    pub const CURATE_CLASS: u64 = 3;
    pub const CURATE_PICK: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const CORPUS: u64 = 6;
    pub const BACKOFF: u64 = 7;
    pub const EPOCH_ORDER: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the UTF-8 bytes. Stable across platforms and releases, unlike
/// `std::hash`.
pub fn stable_hash(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn derive_seed(seed: u64, key: &[u64]) -> u64 {
    key.iter()
        .fold(splitmix64(seed), |acc, k| splitmix64(acc ^ splitmix64(*k)))
}

pub fn stream(seed: u64, key: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, key))
}
