use std::collections::HashSet;
use std::sync::Arc;

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::full_mh::FullMh;
use super::{finish_used, propose, Kernel, KernelState, Stopping, Transition};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::Target;
use crate::rng::{sample_without_replacement, uniform, StreamRng};

/// Scan-order batch source: unseen datapoints are taken in the order of a
/// fixed permutation `σ`, so the set used so far is always `σ[..pos]`.
pub(crate) struct ScanCursor<'a> {
    pub sigma: &'a [usize],
    pub pos: usize,
}

fn draw_uniform_excluding(rng: &mut StreamRng, n: usize, k: usize, taken: &HashSet<usize>) -> Vec<usize> {
    let avail = n - taken.len();
    let k = k.min(avail);
    if taken.is_empty() {
        return sample_without_replacement(rng, n, k);
    }
    if avail < 4 * k.max(1) {
        let pool: Vec<usize> = (0..n).filter(|i| !taken.contains(i)).collect();
        return sample_without_replacement(rng, pool.len(), k).into_iter().map(|j| pool[j]).collect();
    }
    let mut out = Vec::with_capacity(k);
    let mut chosen = HashSet::with_capacity(k);
    while out.len() < k {
        let i = ((uniform(rng) * n as f64) as usize).min(n - 1);
        if !taken.contains(&i) && chosen.insert(i) {
            out.push(i);
        }
    }
    out
}

impl ScanCursor<'_> {
    /// A uniform `k`-subset of the raw indices outside `taken`, realised so
    /// that new indices come from the front of the unseen part of `σ`.
    fn draw(&mut self, rng: &mut StreamRng, k: usize, taken: &HashSet<usize>) -> Vec<usize> {
        let n = self.sigma.len();
        let k = k.min(n - taken.len());
        // every member of `taken` is already seen
        let mut pop = n - taken.len();
        let mut unseen = n - self.pos;
        let mut fresh = 0;
        for _ in 0..k {
            if uniform(rng) * (pop as f64) < unseen as f64 {
                fresh += 1;
                unseen -= 1;
            }
            pop -= 1;
        }
        let seen_before = self.pos;
        let mut out: Vec<usize> = self.sigma[self.pos..self.pos + fresh].to_vec();
        self.pos += fresh;
        let old = k - fresh;
        if old > 0 {
            let avail = seen_before - taken.len();
            if avail < 4 * old {
                let pool: Vec<usize> = self.sigma[..seen_before].iter().copied().filter(|i| !taken.contains(i)).collect();
                out.extend(sample_without_replacement(rng, pool.len(), old).into_iter().map(|j| pool[j]));
            } else {
                let mut chosen = HashSet::with_capacity(old);
                while chosen.len() < old {
                    let j = ((uniform(rng) * seen_before as f64) as usize).min(seen_before - 1);
                    let i = self.sigma[j];
                    if !taken.contains(&i) && chosen.insert(i) {
                        out.push(i);
                    }
                }
            }
        }
        out
    }
}

/// The generic subsampling template: grow a uniform-without-replacement
/// batch until the stopping rule fires, propose by random walk, and accept
/// with the rescaled minibatch MH ratio. The chain is not exact.
#[derive(Clone)]
pub struct GenericSubsampler {
    target: Arc<dyn Target>,
    pub scale: f64,
    pub exponent: f64,
    pub k: usize,
    pub stopping: Stopping,
    pub max_batches: usize,
}

impl GenericSubsampler {
    pub fn new(target: Arc<dyn Target>, scale: f64, k: usize) -> Self {
        Self {
            target,
            scale,
            exponent: 0.5,
            k: k.max(1),
            stopping: Stopping::SingleBatch,
            max_batches: 1000,
        }
    }

    pub fn with_exponent(mut self, exponent: f64) -> Self {
        self.exponent = exponent;
        self
    }

    pub fn with_stopping(mut self, stopping: Stopping, max_batches: usize) -> Self {
        self.stopping = stopping;
        self.max_batches = max_batches.max(1);
        self
    }

    pub fn half_width(&self, n: usize) -> f64 {
        super::half_width(self.scale, self.exponent, n)
    }

    pub(crate) fn step_with(
        &self,
        state: &KernelState,
        data: &Dataset,
        rng: &mut StreamRng,
        mut scan: Option<&mut ScanCursor<'_>>,
    ) -> Result<Transition> {
        let n = data.n();
        let target = self.target.as_ref();
        let proposal = propose(&state.theta, self.half_width(n), rng);
        let log_u = uniform(rng).ln();

        if self.k >= n && scan.is_none() {
            let all: Vec<usize> = (0..n).collect();
            let (theta, accepted) = FullMh::mh_core(target, state, proposal, log_u, data, &all);
            return Ok(Transition {
                state: KernelState {
                    theta,
                    aux: state.aux.clone(),
                },
                used: all,
                accepted,
            });
        }

        let prior_diff = target.log_prior(&proposal) - target.log_prior(&state.theta);
        let mut batch: Vec<usize> = Vec::new();
        let mut taken: HashSet<usize> = HashSet::new();
        let mut diffs: Vec<f64> = Vec::new();
        let mut batches = 0;
        loop {
            if batches == self.max_batches {
                return Err(Error::BatchLimit {
                    max_batches: self.max_batches,
                });
            }
            batches += 1;
            let new = match scan.as_deref_mut() {
                Some(cur) => cur.draw(rng, self.k, &taken),
                None => draw_uniform_excluding(rng, n, self.k, &taken),
            };
            for &i in &new {
                diffs.push(target.log_lik_point(data, i, &proposal) - target.log_lik_point(data, i, &state.theta));
            }
            if !matches!(self.stopping, Stopping::SingleBatch) {
                taken.extend(new.iter().copied());
            }
            batch.extend(new);
            if batch.len() >= n {
                break;
            }
            let stop = match self.stopping {
                Stopping::SingleBatch => true,
                Stopping::Geometric { continue_prob } => uniform(rng) >= continue_prob,
                Stopping::Austerity { delta } => austerity_stop(&diffs, n, (log_u - prior_diff) / n as f64, delta),
            };
            if stop {
                break;
            }
        }
        let sum: f64 = diffs.iter().sum();
        let log_ratio = prior_diff + n as f64 / batch.len() as f64 * sum;
        let accepted = log_u < log_ratio;
        let theta = if accepted { proposal } else { state.theta.clone() };
        Ok(Transition {
            state: KernelState {
                theta,
                aux: state.aux.clone(),
            },
            used: finish_used(batch),
            accepted,
        })
    }
}

/// Sequential t-test of `mean(Δ) > μ₀` with a finite-population correction;
/// stops once the two-sided tail probability drops below `delta`.
fn austerity_stop(diffs: &[f64], n: usize, mu0: f64, delta: f64) -> bool {
    let b = diffs.len();
    if b < 2 {
        return false;
    }
    let mean = diffs.iter().sum::<f64>() / b as f64;
    let var = diffs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (b - 1) as f64;
    let fpc = (1.0 - (b as f64 - 1.0) / (n as f64 - 1.0).max(1.0)).max(0.0);
    let se = (var / b as f64 * fpc).sqrt();
    if se == 0.0 {
        return true;
    }
    let t = ((mean - mu0) / se).abs();
    let tail = match StudentsT::new(0.0, 1.0, (b - 1) as f64) {
        Ok(dist) => 1.0 - dist.cdf(t),
        Err(_) => return true,
    };
    tail < delta
}

impl Kernel for GenericSubsampler {
    fn name(&self) -> &'static str {
        "generic"
    }

    fn target(&self) -> &Arc<dyn Target> {
        &self.target
    }

    fn init_state(&self, theta: Vec<f64>, _data: &Dataset) -> Result<KernelState> {
        if theta.len() != self.target.dim() {
            return Err(Error::DimensionMismatch {
                what: "initial state",
                expected: self.target.dim(),
                got: theta.len(),
            });
        }
        Ok(KernelState::plain(theta))
    }

    fn step(&self, state: &KernelState, data: &Dataset, rng: &mut StreamRng) -> Result<Transition> {
        self.step_with(state, data, rng, None)
    }
}
