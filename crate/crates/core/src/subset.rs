//! Weighted subset samplers.
//!
//! [`ConditionalPoisson`] draws a `k`-subset `S` with `P(S) ∝ Π_{i∈S} wᵢ`
//! using log-space elementary symmetric polynomials; it also yields exact
//! inclusion probabilities. [`AliasTable`] handles the `k = 1` case in O(1)
//! per draw.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::rng::uniform;

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Validates `wᵢ ∈ [1/A, A]` with `A ≥ 1`.
pub fn check_weights(weights: &[f64], bound: f64) -> Result<()> {
    if !(bound >= 1.0) {
        return Err(Error::InvalidConfig(format!("weight bound A must be >= 1, got {bound}")));
    }
    let (lo, hi) = (1.0 / bound, bound);
    // small slack so that w = A and w = 1/A computed in floating point pass
    let eps = 1e-12;
    match weights
        .iter()
        .position(|&w| !(w.is_finite() && w >= lo * (1.0 - eps) && w <= hi * (1.0 + eps)))
    {
        Some(i) => Err(Error::InvalidConfig(format!(
            "weight {} at index {i} lies outside [1/A, A] = [{lo}, {hi}]",
            weights[i]
        ))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalPoisson {
    n: usize,
    k: usize,
    log_w: Vec<f64>,
    /// `suffix[i*(k+1) + r] = log e_r(w_i, …, w_{n−1})`.
    suffix: Vec<f64>,
}

impl ConditionalPoisson {
    pub fn new(weights: &[f64], k: usize) -> Result<Self> {
        let n = weights.len();
        if k == 0 || k > n {
            return Err(Error::InvalidConfig(format!("subset size k = {k} must satisfy 1 <= k <= n = {n}")));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig("subset weights must be positive and finite".into()));
        }
        let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
        let kk = k + 1;
        let mut suffix = vec![f64::NEG_INFINITY; (n + 1) * kk];
        suffix[n * kk] = 0.0;
        for i in (0..n).rev() {
            suffix[i * kk] = 0.0;
            for r in 1..=k {
                suffix[i * kk + r] = log_add(suffix[(i + 1) * kk + r], log_w[i] + suffix[(i + 1) * kk + r - 1]);
            }
        }
        Ok(Self { n, k, log_w, suffix })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    fn suf(&self, i: usize, r: usize) -> f64 {
        self.suffix[i * (self.k + 1) + r]
    }

    /// Sequential draw: index `i` joins with probability
    /// `wᵢ e_{r−1}(w_{i+1..}) / e_r(w_{i..})` where `r` slots remain.
    /// Returns indices in increasing order.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.k);
        let mut r = self.k;
        for i in 0..self.n {
            if r == 0 {
                break;
            }
            if self.n - i == r {
                out.extend(i..self.n);
                break;
            }
            let p = (self.log_w[i] + self.suf(i + 1, r - 1) - self.suf(i, r)).exp();
            if uniform(rng) < p {
                out.push(i);
                r -= 1;
            }
        }
        out
    }

    /// `πᵢ = P(i ∈ S) = wᵢ e_{k−1}(w_{−i}) / e_k(w)`.
    pub fn inclusion_probabilities(&self) -> Vec<f64> {
        let (n, k) = (self.n, self.k);
        let kk = k + 1;
        let mut prefix = vec![f64::NEG_INFINITY; (n + 1) * kk];
        prefix[0] = 0.0;
        for i in 0..n {
            prefix[(i + 1) * kk] = 0.0;
            for r in 1..=k {
                prefix[(i + 1) * kk + r] = log_add(prefix[i * kk + r], self.log_w[i] + prefix[i * kk + r - 1]);
            }
        }
        let log_ek = self.suf(0, k);
        (0..n)
            .map(|i| {
                let mut acc = f64::NEG_INFINITY;
                for a in 0..k {
                    acc = log_add(acc, prefix[i * kk + a] + self.suf(i + 1, k - 1 - a));
                }
                (self.log_w[i] + acc - log_ek).exp().min(1.0)
            })
            .collect()
    }
}

/// Walker alias table for single draws proportional to weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 || weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidConfig("alias table needs nonnegative finite weights".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidConfig("alias table needs positive total weight".into()));
        }
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![1.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        Ok(Self { prob, alias })
    }

    #[inline]
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> usize {
        let n = self.prob.len();
        let u = uniform(rng) * n as f64;
        let i = (u as usize).min(n - 1);
        if u - (i as f64) < self.prob[i] {
            i
        } else {
            self.alias[i]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    /// Brute-force `P(S) ∝ Π w` over all k-subsets.
    fn brute_inclusion(w: &[f64], k: usize) -> Vec<f64> {
        let n = w.len();
        let mut incl = vec![0.0; n];
        let mut total = 0.0;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != k {
                continue;
            }
            let p: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| w[i]).product();
            total += p;
            for i in 0..n {
                if mask >> i & 1 == 1 {
                    incl[i] += p;
                }
            }
        }
        incl.iter().map(|v| v / total).collect()
    }

    #[test]
    fn inclusion_matches_enumeration() {
        let w = [0.5, 2.0, 1.0, 1.7, 0.6, 1.2];
        for k in 1..=6 {
            let cp = ConditionalPoisson::new(&w, k).unwrap();
            let got = cp.inclusion_probabilities();
            let want = brute_inclusion(&w, k);
            for (g, e) in got.iter().zip(&want) {
                assert!((g - e).abs() < 1e-12, "k={k}: {g} vs {e}");
            }
            let s: f64 = got.iter().sum();
            assert!((s - k as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn sampled_frequencies_match_inclusion() {
        let w = [0.5, 2.0, 1.0, 1.7, 0.6];
        let cp = ConditionalPoisson::new(&w, 2).unwrap();
        let pi = cp.inclusion_probabilities();
        let mut rng = RngStream::new(11, 0).rng();
        let reps = 200_000;
        let mut counts = [0usize; 5];
        for _ in 0..reps {
            let s = cp.sample(&mut rng);
            assert_eq!(s.len(), 2);
            for i in s {
                counts[i] += 1;
            }
        }
        for i in 0..5 {
            let f = counts[i] as f64 / reps as f64;
            let sd = (pi[i] * (1.0 - pi[i]) / reps as f64).sqrt();
            assert!((f - pi[i]).abs() < 4.0 * sd, "{i}: {f} vs {}", pi[i]);
        }
    }

    #[test]
    fn two_point_weights() {
        let a: f64 = 2.0;
        let cp = ConditionalPoisson::new(&[a, 1.0 / a], 1).unwrap();
        let pi = cp.inclusion_probabilities();
        assert!((pi[0] - a * a / (1.0 + a * a)).abs() < 1e-14);
    }

    #[test]
    fn alias_frequencies() {
        let w = [1.0, 3.0, 0.5, 0.0, 2.5];
        let t = AliasTable::new(&w).unwrap();
        let mut rng = RngStream::new(12, 0).rng();
        let reps = 200_000;
        let mut counts = [0usize; 5];
        for _ in 0..reps {
            counts[t.sample(&mut rng)] += 1;
        }
        let total: f64 = w.iter().sum();
        for i in 0..5 {
            let p = w[i] / total;
            let f = counts[i] as f64 / reps as f64;
            assert!((f - p).abs() < 4.0 * (p * (1.0 - p) / reps as f64).sqrt() + 1e-12);
        }
    }

    #[test]
    fn weight_bounds_are_checked() {
        assert!(check_weights(&[0.5, 2.0], 2.0).is_ok());
        assert!(check_weights(&[0.4, 2.0], 2.0).is_err());
        assert!(check_weights(&[1.0], 0.5).is_err());
    }
}
