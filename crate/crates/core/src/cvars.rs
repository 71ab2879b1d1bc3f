//! Control variates: dataset statistics available to a sampler for free,
//! their derivatives in the covariates, and warm starts around the MLE.

use nalgebra::DMatrix;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::diagnostics::tv::{log_normaliser, QuadratureSpec};
use crate::error::{Error, Result};
use crate::models::{mle, GlmModel};
use crate::rng::{standard_normal, uniform};

/// Declarative description of a control-variate set, as it appears in
/// experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CvKind {
    /// Components of the sample MLE.
    Mle,
    /// Per-datum rounding of covariates to a lattice of spacing `n^{-a}`.
    Grid { a: f64 },
    /// Column means of the covariates (a sufficient statistic for the
    /// Gaussian-mean toy).
    Mean,
    Composite { parts: Vec<CvKind> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlVariateSet {
    Mle { model: GlmModel, values: Vec<f64> },
    Grid { a: f64, values: Vec<f64> },
    Mean { values: Vec<f64> },
    Composite { parts: Vec<ControlVariateSet> },
}

/// `h · ⌈x/h − ½⌉`: nearest multiple of `h`, ties toward −∞.
#[inline]
pub fn grid_round(x: f64, h: f64) -> f64 {
    h * (x / h - 0.5).ceil()
}

fn grid_spacing(n: usize, a: f64) -> f64 {
    (n.max(1) as f64).powf(-a)
}

fn column_means(data: &Dataset) -> Vec<f64> {
    let mut m = vec![0.0; data.d()];
    for i in 0..data.n() {
        for (mj, x) in m.iter_mut().zip(data.row(i)) {
            *mj += x;
        }
    }
    let n = data.n().max(1) as f64;
    m.iter_mut().for_each(|v| *v /= n);
    m
}

pub fn mle_cv(model: &GlmModel, data: &Dataset) -> Result<ControlVariateSet> {
    Ok(ControlVariateSet::Mle {
        model: *model,
        values: mle(model, data)?,
    })
}

pub fn grid_cv(data: &Dataset, a: f64) -> Result<ControlVariateSet> {
    if !(a >= 0.0) {
        return Err(Error::InvalidConfig(format!("grid exponent a must be >= 0, got {a}")));
    }
    let h = grid_spacing(data.n(), a);
    Ok(ControlVariateSet::Grid {
        a,
        values: data.covariates().iter().map(|&x| grid_round(x, h)).collect(),
    })
}

pub fn mean_cv(data: &Dataset) -> ControlVariateSet {
    ControlVariateSet::Mean {
        values: column_means(data),
    }
}

impl ControlVariateSet {
    /// Builds the set described by `kind` on `data`. `model` is required for
    /// the MLE kind.
    pub fn build(kind: &CvKind, model: Option<&GlmModel>, data: &Dataset) -> Result<Self> {
        match kind {
            CvKind::Mle => {
                let model = model.ok_or_else(|| Error::InvalidConfig("mle control variate needs a GLM model".into()))?;
                mle_cv(model, data)
            }
            CvKind::Grid { a } => grid_cv(data, *a),
            CvKind::Mean => Ok(mean_cv(data)),
            CvKind::Composite { parts } => Ok(ControlVariateSet::Composite {
                parts: parts.iter().map(|p| Self::build(p, model, data)).collect::<Result<_>>()?,
            }),
        }
    }

    pub fn kind(&self) -> CvKind {
        match self {
            ControlVariateSet::Mle { .. } => CvKind::Mle,
            ControlVariateSet::Grid { a, .. } => CvKind::Grid { a: *a },
            ControlVariateSet::Mean { .. } => CvKind::Mean,
            ControlVariateSet::Composite { parts } => CvKind::Composite {
                parts: parts.iter().map(Self::kind).collect(),
            },
        }
    }

    /// Concatenated stored values `t`.
    pub fn values(&self) -> Vec<f64> {
        match self {
            ControlVariateSet::Mle { values, .. }
            | ControlVariateSet::Grid { values, .. }
            | ControlVariateSet::Mean { values } => values.clone(),
            ControlVariateSet::Composite { parts } => parts.iter().flat_map(Self::values).collect(),
        }
    }

    pub fn k(&self) -> usize {
        match self {
            ControlVariateSet::Mle { values, .. }
            | ControlVariateSet::Grid { values, .. }
            | ControlVariateSet::Mean { values } => values.len(),
            ControlVariateSet::Composite { parts } => parts.iter().map(Self::k).sum(),
        }
    }

    /// Recomputes `T(data)`.
    pub fn evaluate(&self, data: &Dataset) -> Result<Vec<f64>> {
        match self {
            ControlVariateSet::Mle { model, .. } => mle(model, data),
            ControlVariateSet::Grid { a, .. } => {
                let h = grid_spacing(data.n(), *a);
                Ok(data.covariates().iter().map(|&x| grid_round(x, h)).collect())
            }
            ControlVariateSet::Mean { .. } => Ok(column_means(data)),
            ControlVariateSet::Composite { parts } => {
                let mut out = Vec::new();
                for p in parts {
                    out.extend(p.evaluate(data)?);
                }
                Ok(out)
            }
        }
    }

    /// `Ṫ`: the `k × d(n−m)` Jacobian of `T` in the free covariates
    /// `x_{ij}, i ≥ m`, column `(i−m)·d + j`.
    pub fn jacobian(&self, data: &Dataset, m: usize) -> Result<DMatrix<f64>> {
        let (n, d) = (data.n(), data.d());
        if m > n {
            return Err(Error::InvalidConfig(format!("fixed prefix {m} exceeds n = {n}")));
        }
        let cols = d * (n - m);
        match self {
            ControlVariateSet::Mle { model, values } => {
                let j = model.mle_jacobian(data, values)?;
                let lu = j.clone().lu();
                if !lu.is_invertible() {
                    return Err(Error::Singular("MLE Jacobian J is singular".into()));
                }
                let df = score_covariate_jacobian(model, data, values, m);
                let sol = lu
                    .solve(&df)
                    .ok_or_else(|| Error::Singular("MLE Jacobian J is singular".into()))?;
                Ok(-sol)
            }
            ControlVariateSet::Grid { .. } => Ok(DMatrix::zeros(self.k(), cols)),
            ControlVariateSet::Mean { .. } => Ok(mean_jacobian(n, d, m)),
            ControlVariateSet::Composite { parts } => {
                let blocks = parts.iter().map(|p| p.jacobian(data, m)).collect::<Result<Vec<_>>>()?;
                Ok(vstack(&blocks, cols))
            }
        }
    }

    /// Smooth residual `g(data)` whose zero set is the level set of the
    /// differentiable statistics. For the MLE kind this is the score at the
    /// stored `β̂` (equivalent to `β̂(data) = t` while `J` is invertible).
    /// Grid statistics are locally constant and contribute no rows.
    pub fn smooth_residual(&self, data: &Dataset) -> Vec<f64> {
        match self {
            ControlVariateSet::Mle { model, values } => model.score(data, values),
            ControlVariateSet::Grid { .. } => Vec::new(),
            ControlVariateSet::Mean { values } => column_means(data).iter().zip(values).map(|(a, b)| a - b).collect(),
            ControlVariateSet::Composite { parts } => parts.iter().flat_map(|p| p.smooth_residual(data)).collect(),
        }
    }

    /// Jacobian of [`ControlVariateSet::smooth_residual`] in the free
    /// covariates. Its row space equals that of [`ControlVariateSet::jacobian`]
    /// for the smooth kinds.
    pub fn smooth_jacobian(&self, data: &Dataset, m: usize) -> DMatrix<f64> {
        let (n, d) = (data.n(), data.d());
        match self {
            ControlVariateSet::Mle { model, values } => score_covariate_jacobian(model, data, values, m),
            ControlVariateSet::Grid { .. } => DMatrix::zeros(0, d * (n - m)),
            ControlVariateSet::Mean { .. } => mean_jacobian(n, d, m),
            ControlVariateSet::Composite { parts } => {
                let blocks: Vec<_> = parts.iter().map(|p| p.smooth_jacobian(data, m)).collect();
                vstack(&blocks, d * (n - m))
            }
        }
    }

    /// Human-readable label of the statistic behind smooth-residual row `r`.
    pub fn smooth_row_label(&self, r: usize) -> String {
        let mut offset = 0;
        self.label_inner(r, &mut offset).unwrap_or_else(|| format!("row {r}"))
    }

    fn label_inner(&self, r: usize, offset: &mut usize) -> Option<String> {
        let rows = match self {
            ControlVariateSet::Mle { values, .. } | ControlVariateSet::Mean { values } => values.len(),
            ControlVariateSet::Grid { .. } => 0,
            ControlVariateSet::Composite { parts } => {
                for p in parts {
                    if let Some(s) = p.label_inner(r, offset) {
                        return Some(s);
                    }
                }
                return None;
            }
        };
        if r < *offset + rows {
            let name = match self {
                ControlVariateSet::Mle { .. } => "mle",
                _ => "mean",
            };
            return Some(format!("{name}[{}]", r - *offset));
        }
        *offset += rows;
        None
    }

    /// Whether `data` lies on the level set `T = t`: the smooth residual is
    /// below `tol` and every grid statistic is unchanged.
    pub fn on_level_set(&self, data: &Dataset, tol: f64) -> bool {
        match self {
            ControlVariateSet::Grid { a, values } => {
                let h = grid_spacing(data.n(), *a);
                data.covariates().iter().zip(values).all(|(&x, &t)| grid_round(x, h) == t)
            }
            ControlVariateSet::Composite { parts } => parts.iter().all(|p| p.on_level_set(data, tol)),
            _ => self.smooth_residual(data).iter().all(|r| r.abs() < tol),
        }
    }
}

/// `∂f_l/∂x_{ij}` for the score `f(x, β) = Σᵢ xᵢᵀ(yᵢ − c'(xᵢβ))/d(σ)`:
/// `(δ_{lj} gᵢ − x_{il} c''(xᵢβ) β_j) / d(σ)`.
fn score_covariate_jacobian(model: &GlmModel, data: &Dataset, beta: &[f64], m: usize) -> DMatrix<f64> {
    let (n, d) = (data.n(), data.d());
    let ds = model.family.d_sigma(model.dispersion);
    let mut out = DMatrix::zeros(d, d * (n - m));
    for i in m..n {
        let x = data.row(i);
        let zeta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let g = data.response(i) - model.family.c1(zeta);
        let c2 = model.family.c2(zeta);
        for j in 0..d {
            let col = (i - m) * d + j;
            for l in 0..d {
                let delta = if l == j { g } else { 0.0 };
                out[(l, col)] = (delta - x[l] * c2 * beta[j]) / ds;
            }
        }
    }
    out
}

fn mean_jacobian(n: usize, d: usize, m: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(d, d * (n - m));
    for i in m..n {
        for j in 0..d {
            out[(j, (i - m) * d + j)] = 1.0 / n as f64;
        }
    }
    out
}

fn vstack(blocks: &[DMatrix<f64>], cols: usize) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(b);
        r += b.nrows();
    }
    out
}

/// Uniform law on the ball `B(center, n^{−c_w})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmStart {
    pub center: Vec<f64>,
    pub radius: f64,
    pub c_w: f64,
}

fn ln_unit_ball_volume(d: usize) -> f64 {
    let d = d as f64;
    0.5 * d * std::f64::consts::PI.ln() - statrs::function::gamma::ln_gamma(0.5 * d + 1.0)
}

impl WarmStart {
    pub fn new(center: Vec<f64>, n: usize, c_w: f64) -> Result<Self> {
        if !(0.5..=2.0).contains(&c_w) {
            return Err(Error::InvalidConfig(format!("warm-start exponent c_w must lie in [0.5, 2], got {c_w}")));
        }
        Ok(Self {
            center,
            radius: (n.max(1) as f64).powf(-c_w),
            c_w,
        })
    }

    /// Ball of an explicit radius (for oracles and tests).
    pub fn with_radius(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius, c_w: f64::NAN }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn log_density(&self) -> f64 {
        -(ln_unit_ball_volume(self.dim()) + self.dim() as f64 * self.radius.ln())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        r2 <= self.radius * self.radius * (1.0 + 1e-12)
    }

    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let d = self.dim();
        let dir: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let r = self.radius * uniform(rng).powf(1.0 / d as f64);
        self.center.iter().zip(&dir).map(|(c, v)| c + r * v / norm).collect()
    }

    /// Nodes at which the density ratio is maximised: a fine grid over the
    /// ball including its boundary.
    fn ratio_nodes(&self) -> Result<Vec<Vec<f64>>> {
        let c = &self.center;
        let r = self.radius;
        match self.dim() {
            1 => Ok((0..=2048).map(|k| vec![c[0] - r + 2.0 * r * k as f64 / 2048.0]).collect()),
            2 => {
                let mut pts = vec![c.clone()];
                for a in 1..=64 {
                    let rho = r * a as f64 / 64.0;
                    for b in 0..256 {
                        let phi = std::f64::consts::TAU * b as f64 / 256.0;
                        pts.push(vec![c[0] + rho * phi.cos(), c[1] + rho * phi.sin()]);
                    }
                }
                Ok(pts)
            }
            d => Err(Error::Unsupported(format!("warm-start ratio needs d <= 2, got {d}"))),
        }
    }

    /// `sup_x μ(x) / π(x)` over quadrature nodes in the ball, with `π`
    /// normalised by quadrature over `spec`.
    pub fn ratio<F>(&self, log_post: F, spec: &QuadratureSpec) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let nodes = self.ratio_nodes()?;
        let log_z = log_normaliser(&log_post, spec)?;
        let lw = self.log_density();
        let sup = nodes
            .iter()
            .map(|x| lw - (log_post(x) - log_z))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(sup.exp())
    }
}
