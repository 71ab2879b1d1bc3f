use std::sync::Arc;

use super::generic::ScanCursor;
use super::{AnyKernel, Aux, FullMh, GenericSubsampler, Kernel, KernelState, Transition};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::Target;
use crate::rng::{permutation, RngStream, StreamRng};

#[derive(Clone)]
enum Wrapped {
    FullMh(FullMh),
    Generic(GenericSubsampler),
}

/// Scan-order representation of a uniform-batch kernel.
///
/// A uniform permutation `σ` of the raw indices is fixed at construction.
/// Each batch is still a uniform subset, but the number of never-used
/// members is drawn first (hypergeometrically) and those members are taken
/// from the front of the unused part of `σ`. The used set after any number of
/// steps is therefore `σ[..M]`, and `σ` is the order of first use.
#[derive(Clone)]
pub struct PermutationWrapper {
    inner: Wrapped,
    sigma: Vec<usize>,
}

impl PermutationWrapper {
    pub fn new(kernel: AnyKernel, n: usize, stream: RngStream) -> Result<Self> {
        let inner = match kernel {
            AnyKernel::FullMh(k) => Wrapped::FullMh(k),
            AnyKernel::Generic(k) => Wrapped::Generic(k),
            other => {
                return Err(Error::Unsupported(format!(
                    "permutation wrapper needs a uniform-batch kernel, got {}",
                    other.name()
                )))
            }
        };
        let sigma = permutation(&mut stream.rng(), n);
        Ok(Self { inner, sigma })
    }

    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    /// Raw indices in order of first use.
    pub fn first_use_order(&self, state: &KernelState) -> &[usize] {
        match state.aux {
            Aux::ScanPosition(m) => &self.sigma[..m.min(self.sigma.len())],
            _ => &[],
        }
    }
}

impl Kernel for PermutationWrapper {
    fn name(&self) -> &'static str {
        match self.inner {
            Wrapped::FullMh(_) => "permuted_full_mh",
            Wrapped::Generic(_) => "permuted_generic",
        }
    }

    fn target(&self) -> &Arc<dyn Target> {
        match &self.inner {
            Wrapped::FullMh(k) => k.target(),
            Wrapped::Generic(k) => k.target(),
        }
    }

    fn init_state(&self, theta: Vec<f64>, data: &Dataset) -> Result<KernelState> {
        if data.n() != self.sigma.len() {
            return Err(Error::DimensionMismatch {
                what: "permutation length vs dataset size",
                expected: self.sigma.len(),
                got: data.n(),
            });
        }
        let s = match &self.inner {
            Wrapped::FullMh(k) => k.init_state(theta, data)?,
            Wrapped::Generic(k) => k.init_state(theta, data)?,
        };
        Ok(KernelState {
            theta: s.theta,
            aux: Aux::ScanPosition(0),
        })
    }

    fn step(&self, state: &KernelState, data: &Dataset, rng: &mut StreamRng) -> Result<Transition> {
        let pos = match state.aux {
            Aux::ScanPosition(p) => p,
            _ => return Err(Error::InvalidData("permuted kernel state needs a scan position".into())),
        };
        let plain = KernelState::plain(state.theta.clone());
        let (mut tr, pos) = match &self.inner {
            Wrapped::FullMh(k) => (k.step(&plain, data, rng)?, data.n()),
            Wrapped::Generic(k) => {
                let mut cur = ScanCursor { sigma: &self.sigma, pos };
                let tr = k.step_with(&plain, data, rng, Some(&mut cur))?;
                (tr, cur.pos)
            }
        };
        tr.state.aux = Aux::ScanPosition(pos);
        Ok(tr)
    }
}
