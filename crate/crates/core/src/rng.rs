// SPDX-License-Identifier: MIT OR Apache-2.0

//! Counter-based pseudo-random numbers.
//!
//! Every draw is a pure function of `(seed, tag, index)`, so any schedule
//! (serial, parallel, partial) sees the same value for the same key.

use std::f64::consts::TAU;

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over a purpose tag, so call sites can name their stream.
pub fn tag(name: &str) -> u64 {
    name.bytes().fold(0xCBF2_9CE4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Keyed stream of standard normals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, tag: u64) -> Self {
        Self {
            key: mix64(mix64(seed) ^ tag),
        }
    }

    /// Derive an independent stream, e.g. one per noise trial.
    pub fn fork(self, index: u64) -> Self {
        Self {
            key: mix64(self.key ^ mix64(index)),
        }
    }

    /// Raw 64 bits at `index`.
    #[inline]
    pub fn bits(self, index: u64) -> u64 {
        mix64(self.key.wrapping_add(mix64(index)))
    }

    /// Uniform in the open interval `(0, 1)`.
    #[inline]
    pub fn uniform(self, index: u64) -> f64 {
        ((self.bits(index) >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal at `index` (Box-Muller on two counter slots).
    #[inline]
    pub fn normal(self, index: u64) -> f64 {
        let u1 = self.uniform(index.wrapping_mul(2));
        let u2 = self.uniform(index.wrapping_mul(2).wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }
}

/// Derive a seed for trial `index` from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base) ^ mix64(index.wrapping_add(0x5EED)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_value() {
        let a = CounterRng::new(7, tag("x"));
        let b = CounterRng::new(7, tag("x"));
        for i in 0..100 {
            assert_eq!(a.normal(i).to_bits(), b.normal(i).to_bits());
        }
        assert_ne!(a.bits(0), CounterRng::new(8, tag("x")).bits(0));
        assert_ne!(a.bits(0), CounterRng::new(7, tag("y")).bits(0));
    }

    #[test]
    fn normal_moments() {
        let rng = CounterRng::new(42, tag("moments"));
        let n = 200_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for i in 0..n {
            let x = rng.normal(i);
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_is_open_interval() {
        let rng = CounterRng::new(0, 0);
        for i in 0..10_000 {
            let u = rng.uniform(i);
            assert!(u > 0.0 && u < 1.0);
        }
    }
}
