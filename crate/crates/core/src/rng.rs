//! Seed derivation for reproducible per-image, per-epoch, per-view streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Randomness stream used throughout the pipeline.
pub type Stream = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable 64-bit FNV-1a hash of an image key.
pub fn key_hash(key: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in key.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Folds a sequence of components into one seed. Order matters.
pub fn combine(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(mix64(0x5EED), |acc, &p| mix64(acc ^ mix64(p)))
}

/// Seed for view `view` of image `key` at `epoch`.
pub fn view_seed(base_seed: u64, key: &str, epoch: u64, view: u64) -> u64 {
    combine(&[base_seed, key_hash(key), epoch, view])
}

/// Seed for a named sub-purpose of a global seed (e.g. "teacher", "distill").
pub fn sub_seed(seed: u64, purpose: &str) -> u64 {
    combine(&[seed, key_hash(purpose)])
}

pub fn stream(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}
