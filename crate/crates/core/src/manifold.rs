//! Coupled datasets on the level set of the control variates.
//!
//! A [`ManifoldConstraint`] fixes the first `m` covariate rows, all
//! responses, and the control-variate values `t`. The remaining free
//! covariates move by a random walk along the tangent space of `{T = t}`
//! with Newton retraction back onto the level set.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cvars::{ControlVariateSet, CvKind};
use crate::dataset::Dataset;
use crate::diagnostics::tv::{tv_distance, QuadratureSpec};
use crate::error::{Error, Result};
use crate::models::{mle, sample_dataset, sample_toy_dataset, CovariateLaw, GlmModel, Target, ToyModel, ToyPosterior};
use crate::rng::{standard_normal, uniform, RngStream, StreamRng};

/// Level-set residual accepted on every step.
pub const RESIDUAL_TOL: f64 = 1e-10;
const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITER: usize = 50;
/// Default trust radius as a fraction of the smallest box half-width.
pub const TRUST_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldConstraint {
    pub base: Dataset,
    pub m: usize,
    pub cv: ControlVariateSet,
    pub law: CovariateLaw,
    pub trust_radius: f64,
}

impl ManifoldConstraint {
    pub fn new(base: Dataset, m: usize, cv: ControlVariateSet, law: CovariateLaw) -> Result<Self> {
        law.validate()?;
        let (n, d, k) = (base.n(), base.d(), cv.k());
        if law.dim() != d {
            return Err(Error::DimensionMismatch {
                what: "covariate law dimension",
                expected: d,
                got: law.dim(),
            });
        }
        if m + k + 1 > n {
            return Err(Error::InvalidConfig(format!(
                "prefix m = {m} leaves no tangent directions: need m <= n - k - 1 = {}",
                n as i64 - k as i64 - 1
            )));
        }
        if let Some(i) = (0..n).find(|&i| !law.contains(base.row(i))) {
            return Err(Error::InvalidData(format!("row {i} lies outside the covariate box")));
        }
        let res = max_abs(&cv.smooth_residual(&base));
        if !(res < RESIDUAL_TOL) || !cv.on_level_set(&base, RESIDUAL_TOL) {
            return Err(Error::InvalidData(format!("base dataset is off the level set (residual {res:e})")));
        }
        let (lo, hi) = law.bounds();
        let half = lo
            .iter()
            .zip(hi)
            .filter(|(a, b)| a < b)
            .map(|(a, b)| 0.5 * (b - a))
            .fold(f64::INFINITY, f64::min);
        Ok(Self {
            base,
            m,
            cv,
            law,
            trust_radius: if half.is_finite() { TRUST_FRACTION * half } else { 0.0 },
        })
    }

    pub fn with_trust_radius(mut self, r: f64) -> Self {
        self.trust_radius = r;
        self
    }

    /// `d(n − m)`.
    pub fn free_dim(&self) -> usize {
        self.base.d() * (self.base.n() - self.m)
    }

    /// Free coordinates that may move: columns pinned by the box
    /// (`lo = hi`) stay fixed.
    pub fn movable(&self) -> Vec<bool> {
        let (lo, hi) = self.law.bounds();
        let d = self.base.d();
        (0..self.free_dim()).map(|c| lo[c % d] < hi[c % d]).collect()
    }

    pub fn residual(&self, data: &Dataset) -> f64 {
        max_abs(&self.cv.smooth_residual(data))
    }

    /// Smooth-constraint Jacobian at `data` with pinned columns zeroed.
    fn constraint_matrix(&self, data: &Dataset) -> DMatrix<f64> {
        let mut a = self.cv.smooth_jacobian(data, self.m);
        for (c, mv) in self.movable().into_iter().enumerate() {
            if !mv {
                a.column_mut(c).fill(0.0);
            }
        }
        a
    }

    fn with_free(&self, free: &[f64]) -> Result<Dataset> {
        let mut z = self.base.clone();
        z.set_free_block(self.m, free)?;
        Ok(z)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn rank_check(a: &DMatrix<f64>) -> Result<()> {
    for r in 0..a.nrows() {
        let sub = a.rows(0, r + 1).into_owned();
        let sv = sub.singular_values();
        let smax = sv.max();
        let rank = sv.iter().filter(|&&s| s > 1e-10 * smax.max(f64::MIN_POSITIVE)).count();
        if smax == 0.0 || rank < r + 1 {
            return Err(Error::RankDeficient { statistic: r });
        }
    }
    Ok(())
}

/// Orthonormal basis (as columns) of the tangent space `W`: free, movable
/// directions annihilated by the control-variate Jacobian.
pub fn tangent_basis(mc: &ManifoldConstraint) -> Result<DMatrix<f64>> {
    let a = mc.constraint_matrix(&mc.base);
    rank_check(&a)?;
    let dim = mc.free_dim();
    let movable = mc.movable();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    if a.nrows() > 0 {
        let q = a.transpose().qr().q();
        basis.extend(q.column_iter().map(|c| c.into_owned()));
    }
    let fixed = basis.len();
    let target = movable.iter().filter(|&&m| m).count() - a.nrows();
    for (i, mv) in movable.iter().enumerate() {
        if basis.len() - fixed == target {
            break;
        }
        if !mv {
            continue;
        }
        let mut w = DVector::zeros(dim);
        w[i] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let nw = w.norm();
        if nw > 1e-8 {
            basis.push(w / nw);
        }
    }
    let cols: Vec<DVector<f64>> = basis.split_off(fixed);
    if cols.is_empty() {
        return Ok(DMatrix::zeros(dim, 0));
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Orthogonal projection of `g` onto `null(a)`.
fn project(a: &DMatrix<f64>, g: &DVector<f64>) -> Result<DVector<f64>> {
    if a.nrows() == 0 {
        return Ok(g.clone());
    }
    let gram = a * a.transpose();
    let coef = gram
        .cholesky()
        .ok_or_else(|| Error::Singular("constraint Gram matrix is singular".into()))?
        .solve(&(a * g));
    Ok(g - a.transpose() * coef)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retraction {
    pub free: Vec<f64>,
    /// `‖result − (x + s v)‖₂`.
    pub correction: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Newton projection of `x + s v` onto `{T = t}` along the row space of the
/// constraint Jacobian at `x` (the current base).
pub fn retract(mc: &ManifoldConstraint, x_free: &[f64], v: &[f64], s: f64) -> Result<Retraction> {
    let dim = mc.free_dim();
    if x_free.len() != dim || v.len() != dim {
        return Err(Error::DimensionMismatch {
            what: "free covariate vector",
            expected: dim,
            got: x_free.len().min(v.len()),
        });
    }
    let x = mc.with_free(x_free)?;
    let a = mc.constraint_matrix(&x);
    let start: DVector<f64> = DVector::from_fn(dim, |i, _| x_free[i] + s * v[i]);
    let mut y = start.clone();
    let mut iterations = 0;
    let mut residual;
    loop {
        let z = mc.with_free(y.as_slice())?;
        let g = DVector::from_vec(mc.cv.smooth_residual(&z));
        residual = g.amax();
        if g.is_empty() || residual < NEWTON_TOL {
            break;
        }
        if iterations == NEWTON_MAX_ITER {
            if residual < RESIDUAL_TOL {
                break;
            }
            return Err(Error::RetractionRejected(format!(
                "Newton did not converge in {NEWTON_MAX_ITER} iterations (residual {residual:e})"
            )));
        }
        let jac = mc.constraint_matrix(&z);
        let delta = (&jac * a.transpose())
            .lu()
            .solve(&g)
            .ok_or_else(|| Error::RetractionRejected("singular Newton system".into()))?;
        y -= a.transpose() * delta;
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::RetractionRejected("Newton iterate diverged".into()));
        }
        iterations += 1;
    }
    let d = mc.base.d();
    for (r, row) in y.as_slice().chunks(d).enumerate() {
        if !mc.law.contains(row) {
            return Err(Error::RetractionRejected(format!("row {} left the covariate box", mc.m + r)));
        }
    }
    let z = mc.with_free(y.as_slice())?;
    if !mc.cv.on_level_set(&z, RESIDUAL_TOL) {
        return Err(Error::RetractionRejected("a grid statistic changed cell".into()));
    }
    Ok(Retraction {
        correction: (&y - &start).norm(),
        free: y.as_slice().to_vec(),
        residual,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub rejection: Option<String>,
}

/// One Metropolis–Hastings step: `V` uniform on the unit sphere of `W`,
/// `S` uniform on `[−s, s]`, retraction, then acceptance against `γ`
/// restricted to the slice. Updates `mc.base` on acceptance.
pub fn manifold_mh_step(mc: &mut ManifoldConstraint, s: f64, rng: &mut StreamRng) -> Result<StepOutcome> {
    let dim = mc.free_dim();
    let movable = mc.movable();
    let a = mc.constraint_matrix(&mc.base);
    let g = DVector::from_fn(dim, |i, _| {
        let z = standard_normal(rng);
        if movable[i] {
            z
        } else {
            0.0
        }
    });
    let step = s * (2.0 * uniform(rng) - 1.0);
    let log_u = uniform(rng).ln();
    let v = project(&a, &g)?;
    let nv = v.norm();
    if !(nv > 0.0) {
        return Ok(StepOutcome {
            accepted: false,
            rejection: Some("empty tangent space".into()),
        });
    }
    let v = v / nv;
    let x = mc.base.free_block(mc.m).to_vec();
    let r = match retract(mc, &x, v.as_slice(), step) {
        Ok(r) => r,
        Err(Error::RetractionRejected(cause)) => {
            return Ok(StepOutcome {
                accepted: false,
                rejection: Some(cause),
            })
        }
        Err(e) => return Err(e),
    };
    let d = mc.base.d();
    let log_ratio: f64 = r
        .free
        .chunks(d)
        .zip(x.chunks(d))
        .map(|(new, old)| mc.law.log_density(new) - mc.law.log_density(old))
        .sum();
    if log_u < log_ratio {
        mc.base.set_free_block(mc.m, &r.free)?;
        Ok(StepOutcome {
            accepted: true,
            rejection: None,
        })
    } else {
        Ok(StepOutcome {
            accepted: false,
            rejection: Some("density ratio".into()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub z2: Dataset,
    pub accepted: usize,
    pub attempted: usize,
    pub residual: f64,
}

impl Coupling {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempted as f64
        }
    }
}

/// Walks `walk_steps` manifold steps from `z1`. With `m ≥ n` nothing is free
/// and `z2 = z1`. `step_scale` defaults to the trust radius.
pub fn couple_datasets(
    z1: &Dataset,
    model: Option<&GlmModel>,
    kind: &CvKind,
    m: usize,
    law: &CovariateLaw,
    walk_steps: usize,
    step_scale: Option<f64>,
    stream: RngStream,
) -> Result<Coupling> {
    let cv = ControlVariateSet::build(kind, model, z1)?;
    if m >= z1.n() {
        return Ok(Coupling {
            z2: z1.clone(),
            accepted: 0,
            attempted: 0,
            residual: max_abs(&cv.smooth_residual(z1)),
        });
    }
    let mut mc = ManifoldConstraint::new(z1.clone(), m, cv, law.clone())?;
    let s = step_scale.unwrap_or(mc.trust_radius);
    let mut rng = stream.rng();
    let mut accepted = 0;
    for _ in 0..walk_steps {
        if manifold_mh_step(&mut mc, s, &mut rng)?.accepted {
            accepted += 1;
        }
    }
    Ok(Coupling {
        residual: mc.residual(&mc.base),
        z2: mc.base,
        accepted,
        attempted: walk_steps,
    })
}

/// Model whose posteriors are compared in a fluctuation experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum FluctuationModel {
    Glm {
        glm: GlmModel,
        beta0: Vec<f64>,
        law: CovariateLaw,
    },
    /// Gaussian hierarchy with observations confined to `[−half_width,
    /// half_width]`.
    GaussianMean { half_width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSpec {
    pub model: FluctuationModel,
    pub n: usize,
    pub m: usize,
    pub cv: CvKind,
    pub replicates: usize,
    pub walk_steps: usize,
    pub step_scale: Option<f64>,
    pub tv_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationRow {
    pub replicate: usize,
    pub tv: Option<f64>,
    pub acceptance: f64,
    pub cv_residual: f64,
    pub prefix_hash: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationResult {
    pub rows: Vec<FluctuationRow>,
    /// `(level, TV quantile)` over successful replicates.
    pub quantiles: Vec<(f64, f64)>,
    pub failed: usize,
}

/// SHA-256 of the prefix rows and all responses, first 16 hex digits.
pub fn prefix_hash(data: &Dataset, m: usize) -> String {
    let mut h = Sha256::new();
    for i in 0..m.min(data.n()) {
        for x in data.row(i) {
            h.update(x.to_le_bytes());
        }
    }
    for y in data.responses() {
        h.update(y.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

const RESAMPLE_ATTEMPTS: u64 = 20;

/// Laplace box `mode ± 12 sd` for a GLM posterior.
fn laplace_bounds(glm: &GlmModel, data: &Dataset) -> Result<Vec<(f64, f64)>> {
    let mode = mle(glm, data)?;
    let h = -glm.hessian_log_posterior(data, &mode)?;
    let cov = h
        .try_inverse()
        .ok_or_else(|| Error::Singular("posterior Hessian at the MLE".into()))?;
    Ok((0..mode.len())
        .map(|j| {
            let sd = cov[(j, j)].max(0.0).sqrt();
            (mode[j] - 12.0 * sd, mode[j] + 12.0 * sd)
        })
        .collect())
}

fn union(a: &[(f64, f64)], b: &[(f64, f64)]) -> Vec<(f64, f64)> {
    a.iter().zip(b).map(|(x, y)| (x.0.min(y.0), x.1.max(y.1))).collect()
}

fn run_replicate(spec: &FluctuationSpec, r: usize, stream: &RngStream) -> Result<FluctuationRow> {
    let rs = stream.child(r as u64);
    let mut last_err = None;
    for attempt in 0..RESAMPLE_ATTEMPTS {
        let ds = rs.child(attempt);
        let z1 = match &spec.model {
            FluctuationModel::Glm { glm, beta0, law } => {
                let z = sample_dataset(&glm.family, beta0, law, spec.n, ds.child(0))?;
                if let Err(e) = mle(glm, &z) {
                    last_err = Some(e);
                    continue;
                }
                z
            }
            FluctuationModel::GaussianMean { half_width } => {
                let z = sample_toy_dataset(ToyModel::GaussianHierarchy, spec.n, None, ds.child(0));
                if z.covariates().iter().any(|x| x.abs() > *half_width) {
                    continue;
                }
                z
            }
        };
        let (glm, law) = match &spec.model {
            FluctuationModel::Glm { glm, law, .. } => (Some(glm), law.clone()),
            FluctuationModel::GaussianMean { half_width } => (
                None,
                CovariateLaw::UniformBox {
                    lo: vec![-half_width],
                    hi: vec![*half_width],
                },
            ),
        };
        let c = match couple_datasets(&z1, glm, &spec.cv, spec.m, &law, spec.walk_steps, spec.step_scale, ds.child(1)) {
            Ok(c) => c,
            Err(e @ (Error::Singular(_) | Error::RankDeficient { .. } | Error::MleFailure(_))) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let tv = match &spec.model {
            FluctuationModel::Glm { glm, .. } => {
                if glm.d > 2 {
                    return Err(Error::Unsupported("posterior TV needs d <= 2".into()));
                }
                let b1 = laplace_bounds(glm, &z1)?;
                let bounds = laplace_bounds(glm, &c.z2).map(|b2| union(&b1, &b2)).unwrap_or(b1);
                let q = QuadratureSpec::new(bounds).with_tol(spec.tv_tol);
                tv_distance(|b| glm.log_prior(b) + glm.log_lik(&z1, b), |b| glm.log_prior(b) + glm.log_lik(&c.z2, b), &q)?
            }
            FluctuationModel::GaussianMean { .. } => {
                let toy = ToyModel::GaussianHierarchy;
                let (mean, var) = match toy.posterior(&z1) {
                    ToyPosterior::Normal { mean, var } => (mean, var),
                    ToyPosterior::Exponential { .. } => unreachable!("Gaussian hierarchy posterior is normal"),
                };
                let sd = var.sqrt();
                let q = QuadratureSpec::new(vec![(mean - 12.0 * sd, mean + 12.0 * sd)]).with_tol(spec.tv_tol);
                tv_distance(|t| toy.log_posterior(&z1, t), |t| toy.log_posterior(&c.z2, t), &q)?
            }
        };
        return Ok(FluctuationRow {
            replicate: r,
            tv: Some(tv),
            acceptance: c.acceptance_rate(),
            cv_residual: c.residual,
            prefix_hash: prefix_hash(&c.z2, spec.m),
            error: None,
        });
    }
    Err(last_err.unwrap_or_else(|| Error::InvalidData("no admissible dataset after resampling".into())))
}

/// Per replicate: draw `Z1`, couple it to `Z2`, and record the posterior TV.
/// Replicate failures are recorded and the experiment continues.
pub fn fluctuation_experiment(spec: &FluctuationSpec, stream: RngStream) -> Result<FluctuationResult> {
    if spec.replicates == 0 || spec.n == 0 {
        return Err(Error::InvalidConfig("fluctuation experiment needs n > 0 and replicates > 0".into()));
    }
    if let FluctuationModel::Glm { glm, beta0, law } = &spec.model {
        law.validate()?;
        if beta0.len() != glm.d || law.dim() != glm.d {
            return Err(Error::DimensionMismatch {
                what: "beta0 / covariate law vs model dimension",
                expected: glm.d,
                got: beta0.len(),
            });
        }
    }
    let rows: Vec<FluctuationRow> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            run_replicate(spec, r, &stream).unwrap_or_else(|e| FluctuationRow {
                replicate: r,
                tv: None,
                acceptance: 0.0,
                cv_residual: f64::NAN,
                prefix_hash: String::new(),
                error: Some(e.to_string()),
            })
        })
        .collect();
    let tvs: Vec<f64> = rows.iter().filter_map(|r| r.tv).collect();
    let quantiles = if tvs.is_empty() {
        Vec::new()
    } else {
        [0.05, 0.25, 0.5, 0.75, 0.95].iter().map(|&q| (q, quantile(&tvs, q))).collect()
    };
    Ok(FluctuationResult {
        failed: rows.iter().filter(|r| r.tv.is_none()).count(),
        rows,
        quantiles,
    })
}
