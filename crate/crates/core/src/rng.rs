//! Reproducible randomness streams.
//!
//! Every random quantity in the laboratory is drawn from a [`RngStream`], a
//! `(seed, stream_id)` pair backed by ChaCha8. ChaCha is counter based, so a
//! stream can be positioned at any draw index and distinct stream ids give
//! independent sequences without any shared state between threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Generator type handed to samplers.
pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// Derives the `index`-th child stream. Children of distinct parents or
    /// distinct indices land on distinct ChaCha stream ids (up to 64-bit
    /// hash collisions).
    pub fn child(&self, index: u64) -> Self {
        let id = splitmix64(self.stream_id ^ splitmix64(index.wrapping_add(0xA5A5_A5A5)));
        Self {
            seed: self.seed,
            stream_id: id,
        }
    }

    /// A fresh generator positioned at the first draw of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// The `draw`-th uniform of this stream (0-based), without generating the
    /// preceding draws. Agrees with repeated calls to [`uniform`] on `rng()`.
    pub fn uniform_at(&self, draw: u64) -> f64 {
        let mut rng = self.rng();
        // each f64 consumes one u64 = two 32-bit words
        rng.set_word_pos(u128::from(draw) * 2);
        uniform(&mut rng)
    }
}

/// A uniform draw in `[0, 1)`.
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Standard normal draw.
#[inline]
pub fn standard_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

/// Uniform sample of `k` distinct indices from `0..n`, in draw order.
pub fn sample_without_replacement<R: RngCore + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k.min(n)).into_vec()
}

/// Uniformly random permutation of `0..n`.
pub fn permutation<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_a_million_draws() {
        let mut rng = RngStream::new(1, 0).rng();
        let n = 1_000_000;
        let mean = (0..n).map(|_| uniform(&mut rng)).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");
    }

    #[test]
    fn same_stream_is_bit_identical() {
        let a: Vec<u64> = {
            let mut r = RngStream::new(7, 3).rng();
            (0..100).map(|_| uniform(&mut r).to_bits()).collect()
        };
        let b: Vec<u64> = {
            let mut r = RngStream::new(7, 3).rng();
            (0..100).map(|_| uniform(&mut r).to_bits()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn distinct_streams_differ_early() {
        let mut r0 = RngStream::new(1, 0).rng();
        let mut r1 = RngStream::new(1, 1).rng();
        let a: Vec<f64> = (0..10).map(|_| uniform(&mut r0)).collect();
        let b: Vec<f64> = (0..10).map(|_| uniform(&mut r1)).collect();
        assert!(a.iter().zip(&b).all(|(x, y)| x != y));
    }

    #[test]
    fn random_access_matches_sequential() {
        let s = RngStream::new(11, 5);
        let mut r = s.rng();
        let seq: Vec<f64> = (0..20).map(|_| uniform(&mut r)).collect();
        for (i, v) in seq.iter().enumerate() {
            assert_eq!(s.uniform_at(i as u64).to_bits(), v.to_bits());
        }
    }

    #[test]
    fn children_are_distinct() {
        let s = RngStream::new(1, 0);
        let ids: std::collections::HashSet<u64> = (0..1000).map(|i| s.child(i).stream_id).collect();
        assert_eq!(ids.len(), 1000);
    }
}
