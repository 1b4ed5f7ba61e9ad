//! Seed derivation.
//!
//! Every command owns a single root seed. Each consumer of randomness asks for
//! a stream by purpose label: `derive(root, label)` hashes the label with
//! FNV-1a, mixes it with the root and finalizes with SplitMix64. Streams are
//! ChaCha8 so they are stable across platforms and crate versions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive the seed of the stream named `label` under `root`.
pub fn derive(root: u64, label: &str) -> u64 {
    splitmix64(root ^ splitmix64(fnv1a(label.as_bytes())))
}

/// Derive the `index`-th seed of a family of streams (trees, episodes, workers).
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive(root, label).wrapping_add(splitmix64(index)))
}

pub fn rng(root: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive(root, label))
}

pub fn rng_indexed(root: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_indexed(root, label, index))
}
