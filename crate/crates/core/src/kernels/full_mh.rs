use std::sync::Arc;

use super::{propose, Kernel, KernelState, Transition};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::Target;
use crate::rng::{uniform, StreamRng};

/// Random-walk Metropolis–Hastings on the full-data posterior with a
/// componentwise uniform proposal of half-width `scale · n^{−exponent}`.
#[derive(Clone)]
pub struct FullMh {
    target: Arc<dyn Target>,
    pub scale: f64,
    pub exponent: f64,
}

impl FullMh {
    pub fn new(target: Arc<dyn Target>, scale: f64) -> Self {
        Self {
            target,
            scale,
            exponent: 0.5,
        }
    }

    pub fn with_exponent(mut self, exponent: f64) -> Self {
        self.exponent = exponent;
        self
    }

    pub fn half_width(&self, n: usize) -> f64 {
        super::half_width(self.scale, self.exponent, n)
    }

    /// One MH step with an explicit batch: the log-likelihood difference is
    /// summed over `batch` in order and rescaled by `n / |batch|`.
    pub(crate) fn mh_core(
        target: &dyn Target,
        state: &KernelState,
        proposal: Vec<f64>,
        log_u: f64,
        data: &Dataset,
        batch: &[usize],
    ) -> (Vec<f64>, bool) {
        let theta = &state.theta;
        let prior_diff = target.log_prior(&proposal) - target.log_prior(theta);
        let mut sum = 0.0;
        for &i in batch {
            sum += target.log_lik_point(data, i, &proposal) - target.log_lik_point(data, i, theta);
        }
        let scale = if batch.len() == data.n() {
            1.0
        } else {
            data.n() as f64 / batch.len() as f64
        };
        let log_ratio = prior_diff + scale * sum;
        if log_u < log_ratio {
            (proposal, true)
        } else {
            (theta.clone(), false)
        }
    }
}

impl Kernel for FullMh {
    fn name(&self) -> &'static str {
        "full_mh"
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
        let n = data.n();
        let proposal = propose(&state.theta, self.half_width(n), rng);
        let log_u = uniform(rng).ln();
        let all: Vec<usize> = (0..n).collect();
        let (theta, accepted) = Self::mh_core(self.target.as_ref(), state, proposal, log_u, data, &all);
        Ok(Transition {
            state: KernelState {
                theta,
                aux: state.aux.clone(),
            },
            used: all,
            accepted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::run_chain;
    use crate::models::{sample_toy_dataset, ToyModel};
    use crate::rng::RngStream;

    #[test]
    fn uses_every_datum() {
        let data = Dataset::observations(vec![0.1, 0.2, 0.3]);
        let k = FullMh::new(Arc::new(ToyModel::GaussianHierarchy), 1.0);
        let mut rng = RngStream::new(1, 0).rng();
        let s = k.init_state(vec![0.0], &data).unwrap();
        let t = k.step(&s, &data, &mut rng).unwrap();
        assert_eq!(t.used, vec![0, 1, 2]);
    }

    #[test]
    fn uphill_moves_always_accepted() {
        // no data: target is the N(0,1) prior; moves toward 0 must be accepted
        let data = Dataset::observations(vec![]);
        let k = FullMh::new(Arc::new(ToyModel::GaussianHierarchy), 0.5);
        let mut rng = RngStream::new(2, 0).rng();
        let mut uphill = 0;
        for _ in 0..10_000 {
            let start = KernelState::plain(vec![3.0 * (2.0 * uniform(&mut rng) - 1.0)]);
            let mut probe = rng.clone();
            let prop = propose(&start.theta, k.half_width(0), &mut probe);
            let t = k.step(&start, &data, &mut rng).unwrap();
            if prop[0].abs() <= start.theta[0].abs() {
                uphill += 1;
                assert!(t.accepted);
            }
        }
        assert!(uphill > 1000);
    }

    #[test]
    fn gaussian_hierarchy_posterior_mean() {
        let toy = ToyModel::GaussianHierarchy;
        let data = sample_toy_dataset(toy, 100, None, RngStream::new(3, 0));
        let post = toy.posterior(&data);
        let k = FullMh::new(Arc::new(toy), 2.0);
        let init = k.init_state(vec![post.mean()], &data).unwrap();
        let (trace, _) = run_chain(&k, &data, init, 100_000, RngStream::new(3, 1), false).unwrap();
        let xs = trace.component(0);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let iat = crate::diagnostics::iat_ess(&xs).unwrap().iat;
        let mc_sd = (post.variance() * iat / xs.len() as f64).sqrt();
        assert!((mean - post.mean()).abs() < 3.0 * mc_sd, "{mean} vs {} (sd {mc_sd})", post.mean());
    }
}
