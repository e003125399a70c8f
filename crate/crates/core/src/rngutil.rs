//! Seed derivation and deterministic random streams.
//!
//! All randomness in the crate flows through ChaCha8 generators created here,
//! so every run is reproducible from a handful of integer seeds. Independent
//! sub-streams (per image, per training stage) come from `set_stream`, which
//! keeps streams statistically independent without consuming one another.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fmath;

/// The crate-wide deterministic generator.
pub type Rng = ChaCha8Rng;

/// Root generator for a seed.
pub fn rng_from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent sub-stream `stream` of the generator family seeded by `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 step; used to derive stage seeds from a master seed without
/// correlation between stages.
pub fn derive_seed(master: u64, tag: u64) -> u64 {
    let mut z = master
        .wrapping_add(tag.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` with 53-bit resolution.
pub fn uniform01(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[lo, hi)`.
pub fn uniform_in(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(rng)
}

/// Uniform integer in `[0, n)`. Uses rejection to stay unbiased.
pub fn uniform_usize(rng: &mut Rng, n: usize) -> usize {
    debug_assert!(n > 0);
    let n = n as u64;
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let v = rng.next_u64();
        if v < zone {
            return (v % n) as usize;
        }
    }
}

/// Standard normal draw via Box–Muller.
pub fn normal01(rng: &mut Rng) -> f64 {
    let u1 = loop {
        let u = uniform01(rng);
        if u > 0.0 {
            break u;
        }
    };
    let u2 = uniform01(rng);
    fmath::sqrt(-2.0 * fmath::ln(u1)) * fmath::cos(2.0 * core::f64::consts::PI * u2)
}

/// Fisher–Yates shuffle driven by the deterministic generator.
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_usize(rng, i + 1);
        items.swap(i, j);
    }
}

/// Samples `k` distinct indices from `0..n` uniformly without replacement,
/// returned in selection order.
pub fn sample_without_replacement(rng: &mut Rng, n: usize, k: usize) -> alloc::vec::Vec<usize> {
    let mut pool: alloc::vec::Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = i + uniform_usize(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}
