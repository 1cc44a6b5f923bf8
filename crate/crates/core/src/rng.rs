//! Seed plumbing. Every stochastic operation takes an explicit `u64` seed and
//! derives child streams from it, so results are pure functions of
//! `(config, seed)` and independent of evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(parent, tag)`.
#[inline]
pub fn derive(parent: u64, tag: u64) -> u64 {
    mix64(parent ^ mix64(tag))
}

/// Child seed for a path of tags.
pub fn derive_path(parent: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(parent, |acc, &t| derive(acc, t))
}

/// Order-sensitive hash of a sequence of ids.
pub fn hash_ids<I: IntoIterator<Item = u64>>(ids: I) -> u64 {
    ids.into_iter()
        .fold(0x5eed_u64, |acc, id| mix64(acc.rotate_left(5) ^ id))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stable tags for derived streams.
pub mod tag {
    pub const CORPUS: u64 = 1;
    pub const WORLD: u64 = 2;
    pub const PERSONAS: u64 = 3;
    pub const SURROGATE: u64 = 4;
    pub const OBFUSCATOR: u64 = 5;
    pub const DENOISER: u64 = 6;
    pub const ADVERSARY: u64 = 7;
    pub const EVAL: u64 = 8;
    pub const SPLIT: u64 = 9;
    pub const INIT: u64 = 10;
    pub const EPOCH: u64 = 11;
    pub const QUERY: u64 = 12;
}
