//! Instrumented Markov kernels.
//!
//! Every kernel reports the exact set of datapoint indices whose values
//! entered its computations during a step. Perturbing any datum outside that
//! set and replaying the step with the same random stream reproduces the
//! next state bit for bit.

mod config;
mod firefly;
mod full_mh;
mod generic;
mod informed;
mod permutation;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use config::{build_kernel, KernelConfig, KernelKind, Stopping, WeightRule};
pub use firefly::{jaakkola_jordan_log_bound, Firefly};
pub use full_mh::FullMh;
pub use generic::GenericSubsampler;
pub use informed::InformedSubsampler;
pub use permutation::PermutationWrapper;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::ledger::UsageLedger;
use crate::models::Target;
use crate::rng::{uniform, RngStream, StreamRng};
use crate::trace::ChainTrace;

/// Auxiliary state component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "aux", content = "value", rename_all = "snake_case")]
pub enum Aux {
    None,
    /// Firefly brightness indicators `zᵢ`.
    Brightness(Vec<bool>),
    /// Number of raw datapoints used so far under the scan-order construction.
    ScanPosition(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelState {
    pub theta: Vec<f64>,
    pub aux: Aux,
}

impl KernelState {
    pub fn plain(theta: Vec<f64>) -> Self {
        Self { theta, aux: Aux::None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: KernelState,
    /// Sorted, deduplicated indices touched by the step.
    pub used: Vec<usize>,
    pub accepted: bool,
}

pub trait Kernel: Send + Sync {
    fn name(&self) -> &'static str;

    fn target(&self) -> &Arc<dyn Target>;

    /// Initial state at `theta`, filling the auxiliary component.
    fn init_state(&self, theta: Vec<f64>, data: &Dataset) -> Result<KernelState>;

    fn step(&self, state: &KernelState, data: &Dataset, rng: &mut StreamRng) -> Result<Transition>;
}

/// Componentwise uniform random-walk proposal of half-width `h`.
pub(crate) fn propose(theta: &[f64], h: f64, rng: &mut StreamRng) -> Vec<f64> {
    theta.iter().map(|t| t + h * (2.0 * uniform(rng) - 1.0)).collect()
}

/// `scale · n^{−exponent}`.
pub fn half_width(scale: f64, exponent: f64, n: usize) -> f64 {
    scale * (n.max(1) as f64).powf(-exponent)
}

pub(crate) fn finish_used(mut used: Vec<usize>) -> Vec<usize> {
    used.sort_unstable();
    used.dedup();
    used
}

/// Type-erased kernel handle.
#[derive(Clone)]
pub enum AnyKernel {
    FullMh(FullMh),
    Generic(GenericSubsampler),
    Informed(InformedSubsampler),
    Firefly(Firefly),
    Permuted(PermutationWrapper),
}

impl AnyKernel {
    fn inner(&self) -> &dyn Kernel {
        match self {
            AnyKernel::FullMh(k) => k,
            AnyKernel::Generic(k) => k,
            AnyKernel::Informed(k) => k,
            AnyKernel::Firefly(k) => k,
            AnyKernel::Permuted(k) => k,
        }
    }
}

impl Kernel for AnyKernel {
    fn name(&self) -> &'static str {
        self.inner().name()
    }

    fn target(&self) -> &Arc<dyn Target> {
        self.inner().target()
    }

    fn init_state(&self, theta: Vec<f64>, data: &Dataset) -> Result<KernelState> {
        self.inner().init_state(theta, data)
    }

    fn step(&self, state: &KernelState, data: &Dataset, rng: &mut StreamRng) -> Result<Transition> {
        self.inner().step(state, data, rng)
    }
}

/// Runs `steps` transitions from `init`, recording states and usage.
/// `keep_sets = false` stores only per-step sizes in the ledger.
pub fn run_chain(
    kernel: &dyn Kernel,
    data: &Dataset,
    init: KernelState,
    steps: usize,
    stream: RngStream,
    keep_sets: bool,
) -> Result<(ChainTrace, KernelState)> {
    let ledger = if keep_sets {
        UsageLedger::new(data.n())
    } else {
        UsageLedger::counting(data.n())
    };
    let mut trace = ChainTrace::new(&init.theta, ledger);
    let mut rng = stream.rng();
    let mut state = init;
    for _ in 0..steps {
        let tr = kernel.step(&state, data, &mut rng)?;
        trace.push(&tr.state.theta, tr.accepted, &tr.used)?;
        state = tr.state;
    }
    Ok((trace, state))
}

/// Outcome of a usage-soundness probe.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayProbe {
    pub step: usize,
    pub perturbed: Option<usize>,
    pub identical: bool,
}

/// Perturbs one datum outside the step's used set (covariates shifted and
/// the response replaced by `alt_response(y)`), replays the step with a
/// cloned generator, and compares the next states bit for bit.
pub fn replay_probe(
    kernel: &dyn Kernel,
    data: &Dataset,
    state: &KernelState,
    rng: &StreamRng,
    pick: &mut StreamRng,
    alt_response: &dyn Fn(f64) -> f64,
) -> Result<(Transition, Option<usize>, bool)> {
    let mut r1 = rng.clone();
    let t1 = kernel.step(state, data, &mut r1)?;
    let unused: Vec<usize> = (0..data.n()).filter(|i| t1.used.binary_search(i).is_err()).collect();
    if unused.is_empty() {
        return Ok((t1, None, true));
    }
    let victim = unused[(uniform(pick) * unused.len() as f64) as usize % unused.len()];
    let mut perturbed = data.clone();
    for x in perturbed.row_mut(victim) {
        *x += 0.37 + 0.5 * uniform(pick);
    }
    perturbed.set_response(victim, alt_response(data.response(victim)));
    let mut r2 = rng.clone();
    let t2 = kernel.step(state, &perturbed, &mut r2)?;
    let same = t1.accepted == t2.accepted
        && t1.state.aux == t2.state.aux
        && t1.state.theta.len() == t2.state.theta.len()
        && t1.state.theta.iter().zip(&t2.state.theta).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok((t1, Some(victim), same))
}

/// Runs `probes` consecutive steps, probing each one.
pub fn usage_soundness(
    kernel: &dyn Kernel,
    data: &Dataset,
    init: KernelState,
    probes: usize,
    stream: RngStream,
    alt_response: &dyn Fn(f64) -> f64,
) -> Result<Vec<ReplayProbe>> {
    let mut rng = stream.rng();
    let mut pick = stream.child(u64::MAX).rng();
    let mut state = init;
    let mut out = Vec::with_capacity(probes);
    for step in 0..probes {
        let (tr, victim, identical) = replay_probe(kernel, data, &state, &rng, &mut pick, alt_response)?;
        out.push(ReplayProbe {
            step,
            perturbed: victim,
            identical,
        });
        // advance the generator exactly as the unperturbed step did
        kernel.step(&state, data, &mut rng)?;
        state = tr.state;
    }
    Ok(out)
}
