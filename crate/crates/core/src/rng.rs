//! Deterministic random number generation.
//!
//! The generator is SplitMix64 (Steele, Lea & Flood 2014), chosen because it
//! is tiny, seedable with any 64-bit value, and trivially reproducible
//! bit-for-bit on every platform. The exact update is:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15                      (wrapping)
//! z  = state
//! z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9           (wrapping)
//! z ^= z >> 27;  z *= 0x94D049BB133111EB           (wrapping)
//! output = z ^ (z >> 31)
//! ```
//!
//! All derived values are defined in terms of that stream:
//! * `next_f64` takes the top 53 bits: `(output >> 11) as f64 * 2^-53`,
//!   uniform on `[0, 1)`.
//! * `normal` applies the Box-Muller transform to two consecutive uniforms.
//!
//! Identical seeds therefore give identical streams everywhere, which the
//! training pipeline relies on for byte-reproducible artifacts.

use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { state: seed }
    }

    /// Derives an independent stream for a named sub-purpose (weight init,
    /// dropout, shuffling, ...) so that adding a consumer does not shift the
    /// streams of the others. `tag` values are fixed constants at call sites.
    pub fn derive(&self, tag: u64) -> Rng {
        let mut r = Rng::new(self.state ^ tag.wrapping_mul(0x9E3779B97F4A7C15));
        r.next_u64();
        r
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform on `[0, 1)` with 53 bits of resolution.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform<S: Scalar>(&mut self) -> S {
        S::cast(self.next_f64())
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in<S: Scalar>(&mut self, lo: S, hi: S) -> S {
        lo + (hi - lo) * self.uniform::<S>()
    }

    /// Standard normal via Box-Muller on two consecutive uniforms. The first
    /// uniform is mapped away from zero so the logarithm stays finite.
    pub fn normal<S: Scalar>(&mut self) -> S {
        let u1 = self.next_f64().max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        S::cast(r * (2.0 * std::f64::consts::PI * u2).cos())
    }

    /// Uniform index in `[0, n)` via rejection sampling, which keeps the
    /// distribution exactly uniform.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0) is undefined");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n + 1) % n;
        loop {
            let v = self.next_u64();
            if v <= zone {
                return (v % n) as usize;
            }
        }
    }

    /// In-place Fisher-Yates shuffle, descending index order.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
