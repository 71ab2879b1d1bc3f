//! Covering times of instrumented kernels and the weighted coupon collector.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelState};
use crate::ledger::UsageLedger;
use crate::rng::{RngStream, StreamRng};
use crate::subset::{check_weights, AliasTable, ConditionalPoisson};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoveringSpec {
    /// Number of distinct used indices that counts as covered.
    pub threshold: usize,
    pub quantile: f64,
    pub replicates: usize,
    /// Step budget per replicate; replicates exceeding it are censored.
    pub max_steps: usize,
}

impl CoveringSpec {
    /// Threshold `n − k − 1`, `q = 0.99`, 500 replicates.
    pub fn default_for(n: usize, k: usize) -> Self {
        Self {
            threshold: n.saturating_sub(k + 1).max(1),
            quantile: 0.99,
            replicates: 500,
            max_steps: 1_000_000,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.threshold > n {
            return Err(Error::InvalidConfig(format!("covering threshold {} exceeds n = {n}", self.threshold)));
        }
        if !(self.quantile > 0.0 && self.quantile <= 1.0) {
            return Err(Error::InvalidConfig(format!("quantile must lie in (0, 1], got {}", self.quantile)));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoveringResult {
    /// First covering step per replicate; `None` when censored.
    pub steps: Vec<Option<usize>>,
    pub quantile: f64,
    /// Empirical quantile with censored runs counted as `+∞`; `None` when
    /// the quantile itself falls among the censored runs.
    pub tau: Option<usize>,
    pub censored_fraction: f64,
    /// More than 10% censored: `tau` (or the step budget) is only a lower
    /// bound.
    pub lower_bound: bool,
}

/// Order statistic `⌈qR⌉` with `None` sorting last.
pub fn empirical_quantile(values: &[Option<usize>], q: f64) -> Option<usize> {
    let mut v: Vec<usize> = values.iter().map(|x| x.unwrap_or(usize::MAX)).collect();
    v.sort_unstable();
    let r = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    let x = v[r - 1];
    (x != usize::MAX).then_some(x)
}

fn summarise(steps: Vec<Option<usize>>, quantile: f64) -> CoveringResult {
    let censored = steps.iter().filter(|s| s.is_none()).count() as f64 / steps.len() as f64;
    CoveringResult {
        tau: empirical_quantile(&steps, quantile),
        steps,
        quantile,
        censored_fraction: censored,
        lower_bound: censored > 0.1,
    }
}

/// Runs `spec.replicates` independent chains (replicate `r` on child stream
/// `r`), each started from `init(rng)`, until the cumulative used set reaches
/// the threshold.
pub fn covering_time(
    kernel: &dyn Kernel,
    data: &Dataset,
    init: &(dyn Fn(&mut StreamRng) -> Result<KernelState> + Sync),
    spec: &CoveringSpec,
    stream: RngStream,
) -> Result<CoveringResult> {
    spec.validate(data.n())?;
    let steps: Vec<Option<usize>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| -> Result<Option<usize>> {
            let mut rng = stream.child(r as u64).rng();
            let mut state = init(&mut rng)?;
            let mut ledger = UsageLedger::counting(data.n());
            if spec.threshold == 0 {
                return Ok(Some(0));
            }
            for t in 1..=spec.max_steps {
                let tr = kernel.step(&state, data, &mut rng)?;
                ledger.record(&tr.used)?;
                if ledger.covered() >= spec.threshold {
                    return Ok(Some(t));
                }
                state = tr.state;
            }
            Ok(None)
        })
        .collect::<Result<_>>()?;
    Ok(summarise(steps, spec.quantile))
}

/// Draws of i.i.d. weighted `k`-subsets needed to collect all `n` indices,
/// one count per replicate. `k = 1` samples single indices with
/// probability `∝ w`; larger `k` uses conditional Poisson subsets.
pub fn coupon_sim(weights: &[f64], k: usize, bound: f64, replicates: usize, stream: RngStream) -> Result<Vec<u64>> {
    let n = weights.len();
    check_weights(weights, bound)?;
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("subset size k = {k} must lie in 1..={n}")));
    }
    if k == n {
        return Ok(vec![1; replicates]);
    }
    enum Sampler {
        Alias(AliasTable),
        Cp(ConditionalPoisson),
    }
    let sampler = if k == 1 {
        Sampler::Alias(AliasTable::new(weights)?)
    } else {
        Sampler::Cp(ConditionalPoisson::new(weights, k)?)
    };
    Ok((0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream.child(r as u64).rng();
            let mut seen = vec![false; n];
            let mut covered = 0;
            let mut draws = 0u64;
            while covered < n {
                draws += 1;
                match &sampler {
                    Sampler::Alias(a) => {
                        let i = a.sample(&mut rng);
                        if !seen[i] {
                            seen[i] = true;
                            covered += 1;
                        }
                    }
                    Sampler::Cp(c) => {
                        for i in c.sample(&mut rng) {
                            if !seen[i] {
                                seen[i] = true;
                                covered += 1;
                            }
                        }
                    }
                }
            }
            draws
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{FullMh, GenericSubsampler};
    use crate::models::ToyModel;
    use std::sync::Arc;

    fn obs(n: usize) -> Dataset {
        Dataset::observations((0..n).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect())
    }

    #[test]
    fn quantile_with_censoring() {
        let v = [Some(3), None, Some(1), Some(2)];
        assert_eq!(empirical_quantile(&v, 0.5), Some(2));
        assert_eq!(empirical_quantile(&v, 1.0), None);
    }

    #[test]
    fn full_mh_covers_in_one_step() {
        let data = obs(50);
        let k = FullMh::new(Arc::new(ToyModel::GaussianHierarchy), 1.0);
        let spec = CoveringSpec {
            threshold: 50,
            quantile: 0.99,
            replicates: 20,
            max_steps: 10,
        };
        let r = covering_time(&k, &data, &|_| Ok(KernelState::plain(vec![0.0])), &spec, RngStream::new(1, 0)).unwrap();
        assert_eq!(r.tau, Some(1));
        assert!(r.steps.iter().all(|s| *s == Some(1)));
    }

    #[test]
    fn censoring_marks_lower_bound() {
        let data = obs(200);
        let k = GenericSubsampler::new(Arc::new(ToyModel::GaussianHierarchy), 1.0, 1);
        let spec = CoveringSpec {
            threshold: 200,
            quantile: 0.9,
            replicates: 10,
            max_steps: 20,
        };
        let r = covering_time(&k, &data, &|_| Ok(KernelState::plain(vec![0.0])), &spec, RngStream::new(1, 0)).unwrap();
        assert!(r.lower_bound);
        assert_eq!(r.tau, None);
    }

    #[test]
    fn full_collection_takes_one_draw() {
        assert_eq!(coupon_sim(&[1.0; 8], 8, 1.0, 5, RngStream::new(0, 0)).unwrap(), vec![1; 5]);
    }

    #[test]
    fn unweighted_mean_matches_harmonic_sum() {
        let n = 100;
        let t = coupon_sim(&vec![1.0; n], 1, 1.0, 1000, RngStream::new(4, 0)).unwrap();
        let mean = t.iter().sum::<u64>() as f64 / t.len() as f64;
        let h: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
        assert!((mean / (n as f64 * h) - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn subset_draws_cover_faster() {
        let t1 = coupon_sim(&vec![1.0; 60], 1, 1.0, 200, RngStream::new(2, 0)).unwrap();
        let t5 = coupon_sim(&vec![1.0; 60], 5, 1.0, 200, RngStream::new(2, 0)).unwrap();
        let m1 = t1.iter().sum::<u64>() as f64;
        let m5 = t5.iter().sum::<u64>() as f64;
        assert!(m5 < m1 / 3.0);
    }

    #[test]
    fn deterministic_across_runs() {
        let a = coupon_sim(&vec![1.0; 30], 3, 1.0, 16, RngStream::new(9, 1)).unwrap();
        let b = coupon_sim(&vec![1.0; 30], 3, 1.0, 16, RngStream::new(9, 1)).unwrap();
        assert_eq!(a, b);
    }
}
