//! Seed derivation.
//!
//! Every random stream is a ChaCha8 generator seeded from the master seed and
//! a path of tags (epoch, member, purpose, ...). Streams never share state, so
//! the work they drive can run in any order and still reproduce bitwise.

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

pub type SimRng = rand_chacha::ChaCha8Rng;

/// Stream purposes used by the meta-learner.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const COLLECT: u64 = 2;
    pub const MODEL_TRAIN: u64 = 3;
    pub const INNER: u64 = 4;
    pub const OUTER: u64 = 5;
    pub const EVAL: u64 = 6;
    pub const ADAPT: u64 = 7;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a tag path into a master seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(master: u64, path: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, path))
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

#[inline]
pub fn normal(rng: &mut SimRng) -> f64 {
    StandardNormal.sample(rng)
}
