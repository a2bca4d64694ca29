//! Seed derivation. Every random stream is a pure function of a root seed and
//! a path of integers, so runs can be resumed or re-created piecewise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(mix(root), |acc, &p| mix(acc ^ mix(p)))
}

pub fn stream(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}

// Stream tags, kept distinct so unrelated consumers never share a sequence.
pub const TAG_CORPUS: u64 = 1;
pub const TAG_SPLIT: u64 = 2;
pub const TAG_GAN_INIT: u64 = 3;
pub const TAG_GAN_EPOCH: u64 = 4;
pub const TAG_SAMPLE: u64 = 5;
pub const TAG_CLF_INIT: u64 = 6;
pub const TAG_CLF_EPOCH: u64 = 7;
pub const TAG_AUGMENT: u64 = 8;
