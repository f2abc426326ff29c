//! Deterministic seed derivation.
//!
//! Every random stream in a run is derived from one master seed by hashing
//! the master seed together with a stream tag and an index. The mixing
//! function is SplitMix64's finalizer, so distinct `(tag, index)` pairs give
//! statistically independent ChaCha streams and the mapping is auditable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` of `base`.
pub fn derive(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index.wrapping_mul(GOLDEN) ^ 0x5EED))
}

/// Child seed for a named phase. Tags are hashed with FNV-1a first.
pub fn derive_tagged(base: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    derive(derive(base, h), index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
