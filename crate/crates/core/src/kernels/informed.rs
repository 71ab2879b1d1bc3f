use std::sync::Arc;

use super::{finish_used, propose, Kernel, KernelState, Transition};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::Target;
use crate::rng::{uniform, StreamRng};
use crate::subset::{check_weights, ConditionalPoisson};

/// Single-batch subsampler whose batch law is `P(S) ∝ Π_{i∈S} wᵢ` with
/// precomputed weights in `[1/A, A]`.
///
/// The log-likelihood difference is estimated by Horvitz–Thompson,
/// `Σ_{i∈S} Δᵢ / πᵢ`, which is unbiased under the weighted batch law and
/// equals the usual `n/k` rescaling when all weights agree.
#[derive(Clone)]
pub struct InformedSubsampler {
    target: Arc<dyn Target>,
    pub scale: f64,
    pub exponent: f64,
    sampler: ConditionalPoisson,
    inclusion: Vec<f64>,
    bound: f64,
}

impl InformedSubsampler {
    pub fn new(target: Arc<dyn Target>, scale: f64, k: usize, weights: &[f64], bound: f64) -> Result<Self> {
        check_weights(weights, bound)?;
        let sampler = ConditionalPoisson::new(weights, k)?;
        let inclusion = sampler.inclusion_probabilities();
        Ok(Self {
            target,
            scale,
            exponent: 0.5,
            sampler,
            inclusion,
            bound,
        })
    }

    pub fn with_exponent(mut self, exponent: f64) -> Self {
        self.exponent = exponent;
        self
    }

    pub fn weight_bound(&self) -> f64 {
        self.bound
    }

    pub fn k(&self) -> usize {
        self.sampler.k()
    }

    pub fn inclusion_probabilities(&self) -> &[f64] {
        &self.inclusion
    }
}

impl Kernel for InformedSubsampler {
    fn name(&self) -> &'static str {
        "informed"
    }

    fn target(&self) -> &Arc<dyn Target> {
        &self.target
    }

    fn init_state(&self, theta: Vec<f64>, data: &Dataset) -> Result<KernelState> {
        if data.n() != self.sampler.n() {
            return Err(Error::DimensionMismatch {
                what: "weights vs dataset size",
                expected: data.n(),
                got: self.sampler.n(),
            });
        }
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
        let n = data.n();
        let target = self.target.as_ref();
        let proposal = propose(&state.theta, super::half_width(self.scale, self.exponent, n), rng);
        let log_u = uniform(rng).ln();
        let batch = self.sampler.sample(rng);
        let mut est = 0.0;
        for &i in &batch {
            let d = target.log_lik_point(data, i, &proposal) - target.log_lik_point(data, i, &state.theta);
            est += d / self.inclusion[i];
        }
        let log_ratio = target.log_prior(&proposal) - target.log_prior(&state.theta) + est;
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ToyModel;
    use crate::rng::RngStream;

    #[test]
    fn weights_outside_bound_are_rejected() {
        let t: Arc<dyn Target> = Arc::new(ToyModel::GaussianHierarchy);
        assert!(InformedSubsampler::new(t.clone(), 1.0, 1, &[3.0, 1.0], 2.0).is_err());
        assert!(InformedSubsampler::new(t, 1.0, 1, &[2.0, 0.5], 2.0).is_ok());
    }

    #[test]
    fn uniform_weights_give_n_over_k() {
        let t: Arc<dyn Target> = Arc::new(ToyModel::GaussianHierarchy);
        let k = InformedSubsampler::new(t, 1.0, 4, &[1.0; 20], 1.0).unwrap();
        assert!(k.inclusion_probabilities().iter().all(|p| (p - 0.2).abs() < 1e-14));
    }

    #[test]
    fn two_point_frequency() {
        let a: f64 = 2.0;
        let t: Arc<dyn Target> = Arc::new(ToyModel::GaussianHierarchy);
        let k = InformedSubsampler::new(t, 1.0, 1, &[a, 1.0 / a], a).unwrap();
        let data = Dataset::observations(vec![0.3, -0.2]);
        let mut rng = RngStream::new(7, 0).rng();
        let s = KernelState::plain(vec![0.0]);
        let reps = 100_000;
        let hits = (0..reps).filter(|_| k.step(&s, &data, &mut rng).unwrap().used == vec![0]).count();
        let p = a * a / (1.0 + a * a);
        let sd = (p * (1.0 - p) / reps as f64).sqrt();
        assert!((hits as f64 / reps as f64 - p).abs() < 3.0 * sd);
    }
}
