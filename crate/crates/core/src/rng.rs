//! Deterministic random streams.
//!
//! Every stochastic routine takes a [`ChainRng`] explicitly. Streams are
//! keyed by `(master seed, subsystem tag, chain index)` and mixed with
//! SplitMix64, so a batch of chains draws the same numbers regardless of how
//! the chains are scheduled across threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Per-chain random stream.
pub type ChainRng = ChaCha12Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn tag_hash(tag: &str) -> u64 {
    // FNV-1a, only used to turn a short tag into a word.
    tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Derive the seed word for `(seed, tag, index)`.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ tag_hash(tag)) ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// A fresh stream for chain `index` of subsystem `tag`.
pub fn stream(seed: u64, tag: &str, index: u64) -> ChainRng {
    let word = derive_seed(seed, tag, index);
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&splitmix64(word.wrapping_add(i as u64)).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// `count` independent streams, one per chain.
pub fn streams(seed: u64, tag: &str, count: usize) -> Vec<ChainRng> {
    (0..count as u64).map(|i| stream(seed, tag, i)).collect()
}

#[inline]
pub fn normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_vec<R: RngCore + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| normal(rng)).collect()
}

pub fn rademacher_vec<R: RngCore + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Uniform draw on `[lo, hi)`.
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}
