//! Keyed seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator whose key is
//! derived from a root seed plus a path of integers (stream tag, trial index,
//! repeat index, ...). Streams never share state, so results do not depend on
//! execution order or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Distinct tags keep, e.g., the subset sampler of trial `k`
/// independent of the learner initialisation of the same trial.
pub mod stream {
    pub const SUBSET: u64 = 0x5355_4253_4554;
    pub const LEARNER: u64 = 0x4c45_4152_4e45;
    pub const REPRESENTATION: u64 = 0x5245_5052;
    pub const RANDOM_REMOVAL: u64 = 0x524d_5652;
    pub const REPEAT: u64 = 0x5245_5054;
    pub const CENTERS: u64 = 0x4345_4e54;
    pub const TRAIN_DRAW: u64 = 0x5452_4e44;
    pub const TEST_DRAW: u64 = 0x5453_5444;
    pub const LABEL_NOISE: u64 = 0x4e4f_4953;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `path` into `root`, producing a 64-bit child seed.
pub fn derive(root: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// A ChaCha8 generator keyed by `(root, path)`.
pub fn rng(root: u64, path: &[u64]) -> ChaCha8Rng {
    let k0 = derive(root, path);
    let mut key = [0u8; 32];
    for (w, chunk) in key.chunks_exact_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(k0 ^ w as u64).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
