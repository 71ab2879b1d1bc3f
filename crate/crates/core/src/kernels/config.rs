use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{AnyKernel, Firefly, FullMh, GenericSubsampler, InformedSubsampler, PermutationWrapper};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{GlmModel, Target};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    FullMh,
    Generic,
    Informed,
    Firefly,
}

/// Batch-growth rule of the generic subsampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Stopping {
    /// One batch of exactly `k` points.
    #[default]
    SingleBatch,
    /// After each batch, continue with probability `continue_prob`.
    Geometric { continue_prob: f64 },
    /// Sequential t-test on the mean log-likelihood difference; stop when
    /// the tail probability falls below `delta`.
    Austerity { delta: f64 },
}

/// How informed-subsampler weights are derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum WeightRule {
    #[default]
    Uniform,
    /// Weight `A` for positive responses, `1/A` otherwise.
    ResponseTilt,
    Explicit { values: Vec<f64> },
}

impl WeightRule {
    pub fn weights(&self, data: &Dataset, bound: f64) -> Result<Vec<f64>> {
        match self {
            WeightRule::Uniform => Ok(vec![1.0; data.n()]),
            WeightRule::ResponseTilt => Ok(data
                .responses()
                .iter()
                .map(|&y| if y > 0.0 { bound } else { 1.0 / bound })
                .collect()),
            WeightRule::Explicit { values } => {
                if values.len() != data.n() {
                    return Err(Error::DimensionMismatch {
                        what: "explicit weights vs dataset size",
                        expected: data.n(),
                        got: values.len(),
                    });
                }
                Ok(values.clone())
            }
        }
    }
}

fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}
fn ten() -> usize {
    10
}
fn thousand() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub kind: KernelKind,
    /// Proposal half-width is `proposal_scale · n^{−proposal_exponent}`.
    #[serde(default = "one")]
    pub proposal_scale: f64,
    #[serde(default = "half")]
    pub proposal_exponent: f64,
    #[serde(default = "ten")]
    pub batch_size: usize,
    #[serde(default)]
    pub stopping: Stopping,
    #[serde(default = "one")]
    pub weight_bound: f64,
    #[serde(default)]
    pub weights: WeightRule,
    #[serde(default = "half")]
    pub resample_fraction: f64,
    /// Firefly bound multiplier `κ ∈ (0, 1]`.
    #[serde(default = "half")]
    pub bound_scale: f64,
    #[serde(default = "thousand")]
    pub max_batches: usize,
    /// Wrap in the scan-order permutation construction.
    #[serde(default)]
    pub permute: bool,
    #[serde(default)]
    pub initial_bright: bool,
}

impl KernelConfig {
    pub fn new(kind: KernelKind) -> Self {
        Self {
            kind,
            proposal_scale: 1.0,
            proposal_exponent: 0.5,
            batch_size: 10,
            stopping: Stopping::SingleBatch,
            weight_bound: 1.0,
            weights: WeightRule::Uniform,
            resample_fraction: 0.5,
            bound_scale: 0.5,
            max_batches: 1000,
            permute: false,
            initial_bright: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.proposal_scale > 0.0 && self.proposal_scale.is_finite()) {
            return bad(format!("kernel.proposal_scale must be positive, got {}", self.proposal_scale));
        }
        if !self.proposal_exponent.is_finite() {
            return bad("kernel.proposal_exponent must be finite".into());
        }
        if self.batch_size < 1 {
            return bad("kernel.batch_size must be >= 1".into());
        }
        match self.stopping {
            Stopping::Austerity { delta } if !(0.0..=1.0).contains(&delta) => {
                return bad(format!("kernel.stopping.delta must lie in [0, 1], got {delta}"))
            }
            Stopping::Geometric { continue_prob } if !(0.0..1.0).contains(&continue_prob) => {
                return bad(format!("kernel.stopping.continue_prob must lie in [0, 1), got {continue_prob}"))
            }
            _ => {}
        }
        if !(self.weight_bound >= 1.0) {
            return bad(format!("kernel.weight_bound must be >= 1, got {}", self.weight_bound));
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return bad(format!("kernel.resample_fraction must lie in (0, 1], got {}", self.resample_fraction));
        }
        if !(self.bound_scale > 0.0 && self.bound_scale <= 1.0) {
            return bad(format!("kernel.bound_scale must lie in (0, 1], got {}", self.bound_scale));
        }
        if self.max_batches < 1 {
            return bad("kernel.max_batches must be >= 1".into());
        }
        if self.permute && matches!(self.kind, KernelKind::Informed | KernelKind::Firefly) {
            return bad("kernel.permute applies only to full_mh and generic kernels".into());
        }
        Ok(())
    }
}

/// Builds a kernel from its config. `glm` is needed for firefly; `stream`
/// seeds the permutation when `permute` is set.
pub fn build_kernel(
    cfg: &KernelConfig,
    target: Arc<dyn Target>,
    glm: Option<&GlmModel>,
    data: &Dataset,
    stream: RngStream,
) -> Result<AnyKernel> {
    cfg.validate()?;
    let kernel = match cfg.kind {
        KernelKind::FullMh => AnyKernel::FullMh(FullMh::new(target, cfg.proposal_scale).with_exponent(cfg.proposal_exponent)),
        KernelKind::Generic => AnyKernel::Generic(
            GenericSubsampler::new(target, cfg.proposal_scale, cfg.batch_size)
                .with_exponent(cfg.proposal_exponent)
                .with_stopping(cfg.stopping, cfg.max_batches),
        ),
        KernelKind::Informed => {
            let w = cfg.weights.weights(data, cfg.weight_bound)?;
            AnyKernel::Informed(
                InformedSubsampler::new(target, cfg.proposal_scale, cfg.batch_size.min(data.n()), &w, cfg.weight_bound)?
                    .with_exponent(cfg.proposal_exponent),
            )
        }
        KernelKind::Firefly => {
            let model = glm.ok_or_else(|| Error::InvalidConfig("firefly kernel needs a GLM model".into()))?;
            let mut ff = Firefly::new(*model, data, cfg.proposal_scale, cfg.resample_fraction, cfg.bound_scale)?
                .with_exponent(cfg.proposal_exponent);
            ff.initial_bright = cfg.initial_bright;
            AnyKernel::Firefly(ff)
        }
    };
    if cfg.permute {
        Ok(AnyKernel::Permuted(PermutationWrapper::new(kernel, data.n(), stream)?))
    } else {
        Ok(kernel)
    }
}
