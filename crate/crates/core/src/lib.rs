//! Instrumented subsampling-MCMC laboratory.
//!
//! Kernels report, at every step, exactly which datapoints they evaluated.
//! That report feeds the usage ledger, covering-time statistics and the cost
//! accounting `n / (gap · covering time)`.

pub mod certificate;
pub mod cli;
pub mod cvars;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod kernels;
pub mod ledger;
pub mod manifold;
pub mod models;
pub mod rng;
pub mod subset;
pub mod trace;

pub use dataset::Dataset;
pub use error::{Error, Result};
pub use ledger::UsageLedger;
pub use rng::RngStream;
pub use trace::ChainTrace;
