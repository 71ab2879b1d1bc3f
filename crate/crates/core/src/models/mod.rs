//! Statistical models: canonical-form GLMs and two closed-form toy models.

mod glm;
mod sample;
mod toy;

pub use glm::{mle, GlmFamily, GlmModel, Prior};
pub use sample::{sample_dataset, sample_toy_dataset, CovariateLaw};
pub use toy::{closed_form_tv, ToyModel, ToyPosterior};

use crate::dataset::Dataset;

/// A posterior `p(θ | data) ∝ p₀(θ) Πᵢ Lᵢ(θ)` that factorises over datapoints.
///
/// Kernels only ever touch data through [`Target::log_lik_point`], which is
/// what makes their usage reports checkable.
pub trait Target: Send + Sync {
    fn dim(&self) -> usize;

    fn log_prior(&self, theta: &[f64]) -> f64;

    /// Log-likelihood contribution of datum `i`.
    fn log_lik_point(&self, data: &Dataset, i: usize, theta: &[f64]) -> f64;

    fn log_lik(&self, data: &Dataset, theta: &[f64]) -> f64 {
        (0..data.n()).map(|i| self.log_lik_point(data, i, theta)).sum()
    }

    fn log_posterior(&self, data: &Dataset, theta: &[f64]) -> f64 {
        self.log_prior(theta) + self.log_lik(data, theta)
    }
}
