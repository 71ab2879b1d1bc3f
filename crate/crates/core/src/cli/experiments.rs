use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::config::*;
use super::manifest::ArtifactSink;
use crate::certificate::{certify, min_singular_monitor, CertificateResult, SigmaMinReport, Verdict};
use crate::cvars::WarmStart;
use crate::dataset::{format_f64, Dataset};
use crate::diagnostics::{
    anticoncentration_check, cost, covering_time, discretize, iat_ess, scaling_experiment, spectral_gap, tv_distance,
    AntiConcentration, CoveringSpec, GridSpec, QuadratureSpec, ScalingCase, ScalingResult,
};
use crate::error::{Error, Result};
use crate::kernels::{build_kernel, run_chain, AnyKernel, Kernel, KernelConfig};
use crate::manifold::{fluctuation_experiment, quantile, FluctuationModel, FluctuationSpec};
use crate::models::{closed_form_tv, mle, sample_dataset, sample_toy_dataset, GlmModel, Target};
use crate::rng::RngStream;

const DATA: u64 = 1;
const KERNEL: u64 = 2;
const CHAIN: u64 = 3;
const AUX: u64 = 4;

/// Replicate counts for the exit-status rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    pub replicates: usize,
    pub failed: usize,
}

impl RunOutcome {
    fn clean(replicates: usize) -> Self {
        Self { replicates, failed: 0 }
    }

    /// More than 10% of replicates failed.
    pub fn too_many_failures(&self) -> bool {
        self.failed * 10 > self.replicates
    }
}

/// Dataset, target and a posterior location/scale guess.
pub struct Problem {
    pub target: Arc<dyn Target>,
    pub glm: Option<GlmModel>,
    pub data: Dataset,
    pub center: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Draws a dataset from the model spec. GLMs are centred at the MLE with
/// Laplace standard deviations; toys use their closed-form posterior.
pub fn build_problem(model: &ModelSpec, n: usize, stream: RngStream) -> Result<Problem> {
    match model {
        ModelSpec::Glm { glm, beta0, .. } => {
            let law = model.law().expect("GLM specs carry a covariate law");
            let data = sample_dataset(&glm.family, beta0, &law, n, stream)?;
            let center = mle(glm, &data)?;
            let h = -glm.hessian_log_posterior(&data, &center)?;
            let cov = h
                .try_inverse()
                .ok_or_else(|| Error::Singular("posterior Hessian at the MLE".into()))?;
            let sd = (0..glm.d).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
            Ok(Problem {
                target: Arc::new(*glm),
                glm: Some(*glm),
                data,
                center,
                sd,
            })
        }
        ModelSpec::Toy { toy, theta0 } => {
            let data = sample_toy_dataset(*toy, n, *theta0, stream);
            let post = toy.posterior(&data);
            Ok(Problem {
                target: Arc::new(*toy),
                glm: None,
                data,
                center: vec![post.mean()],
                sd: vec![post.variance().sqrt()],
            })
        }
    }
}

fn problem_and_kernel(model: &ModelSpec, kernel: &KernelConfig, n: usize, stream: RngStream) -> Result<(Problem, AnyKernel)> {
    let p = build_problem(model, n, stream.child(DATA))?;
    let k = build_kernel(kernel, p.target.clone(), p.glm.as_ref(), &p.data, stream.child(KERNEL))?;
    Ok((p, k))
}

#[derive(Serialize)]
struct SimulateRow {
    replicate: usize,
    acceptance: Option<f64>,
    iat: Option<f64>,
    ess: Option<f64>,
    ess_reliable: Option<bool>,
    accesses: Option<u64>,
    covered: Option<usize>,
    posterior_mean: Option<Vec<f64>>,
    error: Option<String>,
}

pub fn run_simulate(c: &SimulateConfig, seed: u64, sink: &mut ArtifactSink) -> Result<RunOutcome> {
    let root = RngStream::new(seed, 0);
    let (p, kernel) = problem_and_kernel(&c.model, &c.kernel, c.n, root.clone())?;
    sink.csv("data.csv", |w| p.data.write_csv(w))?;
    let runs: Vec<Result<crate::trace::ChainTrace>> = (0..c.replicates)
        .into_par_iter()
        .map(|r| {
            let init = kernel.init_state(p.center.clone(), &p.data)?;
            run_chain(&kernel, &p.data, init, c.steps, RngStream::new(seed, CHAIN).child(r as u64), false).map(|x| x.0)
        })
        .collect();
    let mut rows = Vec::with_capacity(runs.len());
    let mut failed = 0;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(trace) => {
                sink.csv(&format!("trace_{r:03}.csv"), |w| trace.write_csv_thinned(w, c.thin))?;
                let est = iat_ess(&trace.component(0)).ok();
                let dim = trace.dim();
                let mean = (0..dim)
                    .map(|j| {
                        let v = trace.component(j);
                        v.iter().sum::<f64>() / v.len() as f64
                    })
                    .collect();
                rows.push(SimulateRow {
                    replicate: r,
                    acceptance: Some(trace.acceptance_rate()),
                    iat: est.map(|e| e.iat),
                    ess: est.map(|e| e.ess),
                    ess_reliable: est.map(|e| e.reliable),
                    accesses: Some(trace.ledger.access_count()),
                    covered: Some(trace.ledger.covered()),
                    posterior_mean: Some(mean),
                    error: None,
                });
            }
            Err(e) => {
                eprintln!("replicate {r} failed: {e}");
                failed += 1;
                rows.push(SimulateRow {
                    replicate: r,
                    acceptance: None,
                    iat: None,
                    ess: None,
                    ess_reliable: None,
                    accesses: None,
                    covered: None,
                    posterior_mean: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    sink.json(
        "summary.json",
        &serde_json::json!({ "kernel": kernel.name(), "n": c.n, "steps": c.steps, "replicates": rows }),
    )?;
    Ok(RunOutcome {
        replicates: c.replicates,
        failed,
    })
}

pub fn run_fluctuation(c: &FluctuationConfig, seed: u64, sink: &mut ArtifactSink) -> Result<RunOutcome> {
    let model = match &c.model {
        ModelSpec::Glm { glm, beta0, .. } => FluctuationModel::Glm {
            glm: *glm,
            beta0: beta0.clone(),
            law: c.model.law().expect("GLM specs carry a covariate law"),
        },
        ModelSpec::Toy { .. } => FluctuationModel::GaussianMean {
            half_width: c.half_width,
        },
    };
    let spec = FluctuationSpec {
        model,
        n: c.n,
        m: c.m,
        cv: c.cv.clone(),
        replicates: c.replicates,
        walk_steps: c.walk_steps,
        step_scale: c.step_scale,
        tv_tol: c.tv_tol,
    };
    let res = fluctuation_experiment(&spec, RngStream::new(seed, DATA))?;
    sink.csv("fluctuation.csv", |w| {
        use std::io::Write;
        writeln!(w, "replicate,TV,acceptance,cv_residual,prefix_hash,error")?;
        for r in &res.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.replicate,
                r.tv.map(format_f64).unwrap_or_default(),
                format_f64(r.acceptance),
                format_f64(r.cv_residual),
                r.prefix_hash,
                r.error.as_deref().unwrap_or("").replace(',', ";")
            )?;
        }
        Ok(())
    })?;
    for r in res.rows.iter().filter(|r| r.error.is_some()) {
        eprintln!("replicate {} failed: {}", r.replicate, r.error.as_deref().unwrap_or(""));
    }
    sink.json(
        "summary.json",
        &serde_json::json!({ "quantiles": res.quantiles, "failed": res.failed, "replicates": c.replicates }),
    )?;
    Ok(RunOutcome {
        replicates: c.replicates,
        failed: res.failed,
    })
}

#[derive(Serialize)]
struct CertificateReport {
    m: usize,
    pass_fraction: f64,
    runs: Vec<CertificateResult>,
    monitor: Option<SigmaMinReport>,
}

pub fn run_certificate(c: &CertificateConfig, seed: u64, sink: &mut ArtifactSink) -> Result<RunOutcome> {
    let d = c.beta.len();
    let m = d * (d + 1) / 2;
    let law = c.covariates.clone().unwrap_or_else(|| crate::models::CovariateLaw::default_box(d));
    let l_max = c.l_max.unwrap_or(m + 1);
    let runs: Vec<CertificateResult> = (0..c.runs)
        .into_par_iter()
        .map(|r| certify(&c.family, &c.beta, &law, l_max, RngStream::new(seed, DATA).child(r as u64)))
        .collect::<Result<_>>()?;
    let monitor = match &c.monitor {
        Some(mc) => {
            let model = GlmModel::new(c.family, crate::models::Prior::Flat, d);
            let rep = min_singular_monitor(&model, &c.beta, &mc.n_grid, &law, mc.replicates, RngStream::new(seed, AUX))?;
            sink.csv("sigma_min.csv", |w| {
                use std::io::Write;
                writeln!(w, "n,q01,q50,q01_per_n")?;
                for r in &rep.rows {
                    writeln!(w, "{},{},{},{}", r.n, format_f64(r.q01), format_f64(r.q50), format_f64(r.q01_per_n))?;
                }
                Ok(())
            })?;
            Some(rep)
        }
        None => None,
    };
    let passes = runs.iter().filter(|r| r.verdict == Verdict::Pass).count();
    sink.json(
        "certificate.json",
        &CertificateReport {
            m,
            pass_fraction: passes as f64 / runs.len() as f64,
            runs,
            monitor,
        },
    )?;
    Ok(RunOutcome::clean(c.runs))
}

pub fn run_covering(c: &CoveringConfig, seed: u64, sink: &mut ArtifactSink) -> Result<RunOutcome> {
    let root = RngStream::new(seed, 0);
    let (p, kernel) = problem_and_kernel(&c.model, &c.kernel, c.n, root)?;
    let warm = WarmStart::new(p.center.clone(), c.n, c.c_w)?;
    let spec = CoveringSpec {
        threshold: c.threshold.unwrap_or_else(|| c.n.saturating_sub(p.center.len() + 1).max(1)),
        quantile: c.quantile,
        replicates: c.replicates,
        max_steps: c.max_steps,
    };
    let init = |rng: &mut crate::rng::StreamRng| kernel.init_state(warm.sample(rng), &p.data);
    let res = covering_time(&kernel, &p.data, &init, &spec, RngStream::new(seed, CHAIN))?;
    sink.csv("covering.csv", |w| {
        use std::io::Write;
        writeln!(w, "replicate,steps,censored")?;
        for (r, s) in res.steps.iter().enumerate() {
            writeln!(w, "{},{},{}", r, s.map(|v| v.to_string()).unwrap_or_default(), u8::from(s.is_none()))?;
        }
        Ok(())
    })?;
    sink.json(
        "summary.json",
        &serde_json::json!({
            "kernel": kernel.name(),
            "n": c.n,
            "threshold": spec.threshold,
            "quantile": res.quantile,
            "tau": res.tau,
            "censored_fraction": res.censored_fraction,
            "lower_bound": res.lower_bound,
        }),
    )?;
    Ok(RunOutcome::clean(c.replicates))
}

pub fn run_scaling(c: &ScalingConfig, seed: u64, sink: &mut ArtifactSink) -> Result<RunOutcome> {
    let build = |n: usize, s: RngStream| -> Result<ScalingCase> {
        let (p, kernel) = problem_and_kernel(&c.model, &c.kernel, n, s)?;
        let init = kernel.init_state(p.center.clone(), &p.data)?;
        Ok(ScalingCase {
            kernel,
            data: p.data,
            init,
            steps: c.steps,
        })
    };
    let root = RngStream::new(seed, CHAIN);
    let mut res: ScalingResult = scaling_experiment(&c.n_grid, &build, &|t| t[0], root.clone())?;
    if c.discretize.is_some() || c.covering.is_some() {
        for (i, row) in res.rows.iter_mut().enumerate() {
            let (p, kernel) = problem_and_kernel(&c.model, &c.kernel, row.n, root.child(i as u64))?;
            if let Some(dc) = &c.discretize {
                if p.center.len() <= 2 {
                    let grid = GridSpec::around(&p.center, &p.sd, dc.width_sd, dc.cells);
                    let tm = discretize(&kernel, &p.data, &grid, dc.draws, RngStream::new(seed, AUX).child(i as u64))?;
                    row.gap = Some(spectral_gap(&tm)?);
                }
            }
            if let Some(cc) = &c.covering {
                let warm = WarmStart::new(p.center.clone(), row.n, 0.5)?;
                let spec = CoveringSpec {
                    threshold: row.n.saturating_sub(p.center.len() + 1).max(1),
                    quantile: cc.quantile,
                    replicates: cc.replicates,
                    max_steps: cc.max_steps,
                };
                let init = |rng: &mut crate::rng::StreamRng| kernel.init_state(warm.sample(rng), &p.data);
                let cov = covering_time(&kernel, &p.data, &init, &spec, RngStream::new(seed, AUX).child((1 << 32) + i as u64))?;
                row.tau = cov.tau.map(|t| t as f64);
            }
            if let (Some(g), Some(t)) = (row.gap, row.tau) {
                row.cost = cost(row.n, g.max(f64::MIN_POSITIVE), t.max(1.0)).ok();
            }
        }
    }
    sink.csv("scaling.csv", |w| res.write_csv(w))?;
    sink.json("summary.json", &res)?;
    Ok(RunOutcome::clean(c.n_grid.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRow {
    pub n: usize,
    pub m: usize,
    pub replicate: usize,
    pub tv_closed_form: f64,
    pub tv_quadrature: f64,
    pub tv_tempered: f64,
}

/// TV between the full posterior and the posterior of the first `m`
/// observations, in closed form and by quadrature, plus the closed-form TV
/// to the subsample posterior tempered by `n/m`.
pub fn toy_rows(c: &ToyConfig, seed: u64) -> Result<Vec<ToyRow>> {
    let jobs: Vec<(usize, usize, usize)> = c
        .n_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| (0..c.replicates).map(move |r| (i, n, r)))
        .collect();
    jobs.into_par_iter()
        .map(|(i, n, r)| {
            let m = match c.m {
                SubsampleRule::Sqrt => (n as f64).sqrt().ceil() as usize,
                SubsampleRule::Fixed(m) => m,
            };
            let data = sample_toy_dataset(c.toy, n, None, RngStream::new(seed, DATA).child(i as u64).child(r as u64));
            let sub = data.prefix(m);
            let full = c.toy.posterior(&data);
            let part = c.toy.posterior(&sub);
            let tempered = c.toy.scaled_posterior(&sub, n as f64 / m as f64);
            let (a, b) = full.support_hint();
            let (e, f) = part.support_hint();
            let q = QuadratureSpec::new(vec![(a.min(e), b.max(f))]).with_tol(c.tv_tol);
            let tv_q = tv_distance(|t| full.log_pdf(t[0]), |t| part.log_pdf(t[0]), &q)?;
            Ok(ToyRow {
                n,
                m,
                replicate: r,
                tv_closed_form: closed_form_tv(&full, &part),
                tv_quadrature: tv_q,
                tv_tempered: closed_form_tv(&full, &tempered),
            })
        })
        .collect()
}

pub fn run_toy(c: &ToyConfig, seed: u64, sink: &mut ArtifactSink) -> Result<RunOutcome> {
    let rows = toy_rows(c, seed)?;
    sink.csv("toy_tv.csv", |w| {
        use std::io::Write;
        writeln!(w, "n,m,replicate,tv_closed_form,tv_quadrature,abs_diff,tv_tempered")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.n,
                r.m,
                r.replicate,
                format_f64(r.tv_closed_form),
                format_f64(r.tv_quadrature),
                format_f64((r.tv_closed_form - r.tv_quadrature).abs()),
                format_f64(r.tv_tempered)
            )?;
        }
        Ok(())
    })?;
    let per_n: Vec<serde_json::Value> = c
        .n_grid
        .iter()
        .map(|&n| {
            let sel: Vec<&ToyRow> = rows.iter().filter(|r| r.n == n).collect();
            let tv: Vec<f64> = sel.iter().map(|r| r.tv_closed_form).collect();
            let tt: Vec<f64> = sel.iter().map(|r| r.tv_tempered).collect();
            let diff = sel.iter().map(|r| (r.tv_closed_form - r.tv_quadrature).abs()).fold(0.0, f64::max);
            serde_json::json!({
                "n": n,
                "median_tv": quantile(&tv, 0.5),
                "median_tv_tempered": quantile(&tt, 0.5),
                "max_abs_diff": diff,
            })
        })
        .collect();
    sink.json("summary.json", &serde_json::json!({ "toy": c.toy, "per_n": per_n }))?;
    Ok(RunOutcome::clean(rows.len()))
}

pub fn anticoncentration_rows(c: &AntiConfig, seed: u64) -> Result<Vec<(usize, AntiConcentration)>> {
    c.m_grid
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            let v = vec![1.0 / (m as f64).sqrt(); m];
            anticoncentration_check(&v, c.lo, c.hi, c.eps, c.samples, RngStream::new(seed, DATA).child(i as u64)).map(|a| (m, a))
        })
        .collect()
}

pub fn run_anticoncentration(c: &AntiConfig, seed: u64, sink: &mut ArtifactSink) -> Result<RunOutcome> {
    let rows = anticoncentration_rows(c, seed)?;
    sink.csv("anticoncentration.csv", |w| {
        use std::io::Write;
        writeln!(w, "m,max_mass,bound,sigma_mc,ok")?;
        for (m, a) in &rows {
            writeln!(
                w,
                "{},{},{},{},{}",
                m,
                format_f64(a.max_mass),
                format_f64(a.bound),
                format_f64(a.sigma_mc),
                u8::from(a.ok)
            )?;
        }
        Ok(())
    })?;
    Ok(RunOutcome::clean(rows.len()))
}

pub fn run_experiment(cfg: &ExperimentConfig, seed: u64, sink: &mut ArtifactSink) -> Result<RunOutcome> {
    match cfg {
        ExperimentConfig::Simulate(c) => run_simulate(c, seed, sink),
        ExperimentConfig::Fluctuation(c) => run_fluctuation(c, seed, sink),
        ExperimentConfig::Certificate(c) => run_certificate(c, seed, sink),
        ExperimentConfig::Covering(c) => run_covering(c, seed, sink),
        ExperimentConfig::Scaling(c) => run_scaling(c, seed, sink),
        ExperimentConfig::Toy(c) => run_toy(c, seed, sink),
        ExperimentConfig::Anticoncentration(c) => run_anticoncentration(c, seed, sink),
    }
}
