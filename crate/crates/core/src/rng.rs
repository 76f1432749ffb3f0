//! Portable seeded randomness.
//!
//! Every random draw comes from a ChaCha8 stream whose 64-bit seed is derived
//! by chaining SplitMix64 over `(seed, tag, a, b)`. The tag names the purpose
//! (arrivals, object parameters, count noise, ...) and `a`/`b` are the frame,
//! object or class indices, so each draw is independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const TAG_ARRIVALS: u64 = 0x41;
pub(crate) const TAG_OBJECT: u64 = 0x4f;
pub(crate) const TAG_COUNT_NOISE: u64 = 0x43;
pub(crate) const TAG_GRID_NOISE: u64 = 0x47;
pub(crate) const TAG_SAMPLE: u64 = 0x53;
pub(crate) const TAG_REPETITION: u64 = 0x52;

/// One SplitMix64 output step applied to `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(seed);
    for v in [tag, a, b] {
        h = splitmix64(h ^ v);
    }
    h
}

pub fn stream(seed: u64, tag: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, tag, a, b))
}
