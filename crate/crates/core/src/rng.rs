//! Reproducible random streams.
//!
//! A [`StreamRng`] is addressed by a `(seed, stream)` pair. The seed keys a
//! ChaCha8 generator (expanded with `seed_from_u64`) and the stream id is
//! written into the ChaCha nonce, so every pair owns an independent
//! counter-based keystream. Monte Carlo drivers give sample `i` the stream
//! `i`, which makes results independent of how samples are scheduled over
//! threads.
//!
//! Normal variates use the ziggurat sampler of `rand_distr::StandardNormal`.
//! Uniforms on `(0, 1]` are `1 - U` with `U` the standard 53-bit `[0, 1)`
//! draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct StreamRng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform draw on `(0, 1]`.
    pub fn uniform(&mut self) -> f64 {
        1.0 - self.inner.random::<f64>()
    }
}

/// Derives a sub-seed for a named purpose so that different experiments
/// sharing a user seed do not reuse the same keystreams (splitmix64 finalizer).
pub fn derive_seed(seed: u64, purpose: u64) -> u64 {
    let mut z = seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_address_same_sequence() {
        let mut a = StreamRng::new(42, 7);
        let mut b = StreamRng::new(42, 7);
        for _ in 0..1000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = StreamRng::new(42, 0);
        let mut b = StreamRng::new(42, 1);
        let xs: Vec<f64> = (0..16).map(|_| a.normal()).collect();
        let ys: Vec<f64> = (0..16).map(|_| b.normal()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let n = 200_000;
        let mut a = StreamRng::new(3, 10);
        let mut b = StreamRng::new(3, 11);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += a.normal() * b.normal();
        }
        let corr = sum / n as f64;
        assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr = {corr}");
    }

    #[test]
    fn uniform_in_half_open_unit_interval() {
        let mut r = StreamRng::new(1, 1);
        for _ in 0..100_000 {
            let u = r.uniform();
            assert!(u > 0.0 && u <= 1.0);
        }
    }

    #[test]
    fn derived_seeds_are_distinct() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
