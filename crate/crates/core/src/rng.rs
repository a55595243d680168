//! Deterministic seed derivation.
//!
//! Every random draw in the bench comes from a stream derived from the
//! master seed plus a label path (cycle, step, position, sensor, frame,
//! pixel, ...). Streams are independent of evaluation order, so work can
//! be reordered or batched without changing a single output byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; the standard 64-bit avalanche mix.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a label.
#[inline]
pub fn child(seed: u64, label: u64) -> u64 {
    mix(seed ^ mix(label))
}

/// Derives a seed from a label path.
pub fn stream(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(seed, |s, &l| child(s, l))
}

/// Counter-seeded RNG for one labelled stream.
pub fn rng_for(seed: u64, labels: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream(seed, labels))
}

/// Two independent standard-normal draws from a single 64-bit seed.
///
/// Box-Muller on the mixed counter; cheap enough for per-pixel use and
/// schedule-independent by construction.
#[inline]
pub fn normal_pair(seed: u64) -> (f64, f64) {
    let a = mix(seed);
    let b = mix(seed ^ 0xd6e8_feb8_6659_fd93);
    // map to (0,1]; keep u1 away from 0 for the log
    let u1 = ((a >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
    let u2 = (b >> 11) as f64 / (1u64 << 53) as f64;
    let r = (-2.0 * u1.ln()).sqrt();
    let th = std::f64::consts::TAU * u2;
    (r * th.cos(), r * th.sin())
}

/// Uniform draw in [0,1) from a 64-bit seed.
#[inline]
pub fn uniform(seed: u64) -> f64 {
    (mix(seed) >> 11) as f64 / (1u64 << 53) as f64
}
