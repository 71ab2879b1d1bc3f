use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::iat::iat_ess;
use crate::dataset::{format_f64, Dataset};
use crate::error::{Error, Result};
use crate::kernels::{run_chain, AnyKernel, KernelState};
use crate::rng::RngStream;

/// `n / (λ τ)`.
pub fn cost(n: usize, gap: f64, tau: f64) -> Result<f64> {
    if !(gap > 0.0 && gap <= 1.0) {
        return Err(Error::InvalidData(format!("gap must lie in (0, 1], got {gap}")));
    }
    if !(tau >= 1.0) {
        return Err(Error::InvalidData(format!("covering time must be >= 1, got {tau}")));
    }
    Ok(n as f64 / (gap * tau))
}

/// Ordinary least-squares fit `y = a + b x`, returning `(b, a)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidData("line fit needs at least two paired points".into()));
    }
    let k = x.len() as f64;
    let mx = x.iter().sum::<f64>() / k;
    let my = y.iter().sum::<f64>() / k;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidData("line fit needs distinct abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    Ok((b, my - b * mx))
}

/// One point of a scaling sweep.
pub struct ScalingCase {
    pub kernel: AnyKernel,
    pub data: Dataset,
    pub init: KernelState,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    pub steps: usize,
    pub iat: f64,
    pub ess: f64,
    pub accesses: u64,
    pub accesses_per_es: f64,
    pub acceptance: f64,
    pub reliable: bool,
    pub gap: Option<f64>,
    pub tau: Option<f64>,
    pub cost: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub rows: Vec<ScalingRow>,
    /// Least-squares slope of `log(accesses per ES)` against `log n`.
    pub slope: f64,
    pub intercept: f64,
    /// False if any row's ESS estimate is unreliable.
    pub reliable: bool,
}

impl ScalingResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,ESS,accesses,accesses_per_ES,gap,tau,cost")?;
        let opt = |v: Option<f64>| v.map(format_f64).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.n,
                format_f64(r.ess),
                r.accesses,
                format_f64(r.accesses_per_es),
                opt(r.gap),
                opt(r.tau),
                opt(r.cost)
            )?;
        }
        Ok(())
    }
}

/// Runs `build(n, stream)` for every `n`, records accesses per effective
/// sample of `phi(θ)`, and fits the log-log slope. Point `i` uses child
/// stream `i` for construction and `i + 2⁴⁰` for the chain.
pub fn scaling_experiment(
    ns: &[usize],
    build: &(dyn Fn(usize, RngStream) -> Result<ScalingCase> + Sync),
    phi: &(dyn Fn(&[f64]) -> f64 + Sync),
    stream: RngStream,
) -> Result<ScalingResult> {
    let rows: Vec<ScalingRow> = ns
        .par_iter()
        .enumerate()
        .map(|(i, &n)| -> Result<ScalingRow> {
            let case = build(n, stream.child(i as u64))?;
            let (trace, _) = run_chain(&case.kernel, &case.data, case.init, case.steps, stream.child((1 << 40) + i as u64), false)?;
            let values: Vec<f64> = (0..trace.len()).map(|t| phi(trace.state(t))).collect();
            let est = iat_ess(&values)?;
            let accesses = trace.ledger.access_count();
            Ok(ScalingRow {
                n,
                steps: case.steps,
                iat: est.iat,
                ess: est.ess,
                accesses,
                accesses_per_es: accesses as f64 / est.ess,
                acceptance: trace.acceptance_rate(),
                reliable: est.reliable,
                gap: None,
                tau: None,
                cost: None,
            })
        })
        .collect::<Result<_>>()?;
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.accesses_per_es.ln()).collect();
    let (slope, intercept) = fit_line(&x, &y)?;
    Ok(ScalingResult {
        reliable: rows.iter().all(|r| r.reliable),
        rows,
        slope,
        intercept,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TvEntry {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub n: Option<usize>,
    pub gap: Option<f64>,
    pub pseudo_gap: Option<f64>,
    pub asvar: Option<f64>,
    pub ess: Option<f64>,
    pub ess_reliable: Option<bool>,
    pub tau: Option<f64>,
    pub tau_quantile: Option<f64>,
    pub tau_lower_bound: Option<bool>,
    pub cost: Option<f64>,
    pub tv: Vec<TvEntry>,
}

impl DiagnosticsReport {
    /// Fills `cost` from `n`, `gap` and `tau` when all are present.
    pub fn finalise(&mut self) -> Result<()> {
        if let Some(g) = self.gap {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::InvalidData(format!("gap {g} outside [0, 1]")));
            }
        }
        if let (Some(n), Some(g), Some(t)) = (self.n, self.gap, self.tau) {
            self.cost = Some(cost(n, g, t)?);
        }
        Ok(())
    }
}
