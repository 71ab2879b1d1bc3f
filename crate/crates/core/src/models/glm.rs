use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::Target;
use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Canonical-form exponential family: `b(x) = x`, so the per-datum
/// log-likelihood is `(ζ y − c(ζ)) / d(σ) + log a(y, σ)` with `ζ = xᵢβ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GlmFamily {
    Logistic,
    Binomial { trials: u32 },
    Poisson,
    /// Gaussian response with identity link, `c(x) = x²/2`.
    GaussianIdentity,
}

/// `log(1 + eˣ)` without overflow.
#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl GlmFamily {
    pub fn name(&self) -> &'static str {
        match self {
            GlmFamily::Logistic => "logistic",
            GlmFamily::Binomial { .. } => "binomial",
            GlmFamily::Poisson => "poisson",
            GlmFamily::GaussianIdentity => "gaussian_identity",
        }
    }

    #[inline]
    pub fn c(&self, x: f64) -> f64 {
        match *self {
            GlmFamily::Logistic => softplus(x),
            GlmFamily::Binomial { trials } => f64::from(trials) * softplus(x),
            GlmFamily::Poisson => x.exp(),
            GlmFamily::GaussianIdentity => 0.5 * x * x,
        }
    }

    /// `c'(x)`, the mean function.
    #[inline]
    pub fn c1(&self, x: f64) -> f64 {
        match *self {
            GlmFamily::Logistic => sigmoid(x),
            GlmFamily::Binomial { trials } => f64::from(trials) * sigmoid(x),
            GlmFamily::Poisson => x.exp(),
            GlmFamily::GaussianIdentity => x,
        }
    }

    #[inline]
    pub fn c2(&self, x: f64) -> f64 {
        let logistic = |x: f64| {
            let s = sigmoid(x);
            s * (1.0 - s)
        };
        match *self {
            GlmFamily::Logistic => logistic(x),
            GlmFamily::Binomial { trials } => f64::from(trials) * logistic(x),
            GlmFamily::Poisson => x.exp(),
            GlmFamily::GaussianIdentity => 1.0,
        }
    }

    pub fn c3(&self, x: f64) -> f64 {
        let logistic = |x: f64| {
            let s = sigmoid(x);
            s * (1.0 - s) * (1.0 - 2.0 * s)
        };
        match *self {
            GlmFamily::Logistic => logistic(x),
            GlmFamily::Binomial { trials } => f64::from(trials) * logistic(x),
            GlmFamily::Poisson => x.exp(),
            GlmFamily::GaussianIdentity => 0.0,
        }
    }

    pub fn c4(&self, x: f64) -> f64 {
        let logistic = |x: f64| {
            let s = sigmoid(x);
            s * (1.0 - s) * (1.0 - 6.0 * s + 6.0 * s * s)
        };
        match *self {
            GlmFamily::Logistic => logistic(x),
            GlmFamily::Binomial { trials } => f64::from(trials) * logistic(x),
            GlmFamily::Poisson => x.exp(),
            GlmFamily::GaussianIdentity => 0.0,
        }
    }

    /// `d(σ)`: 1 for the discrete families, `σ²` for the Gaussian one.
    pub fn d_sigma(&self, sigma: f64) -> f64 {
        match self {
            GlmFamily::GaussianIdentity => sigma * sigma,
            _ => 1.0,
        }
    }

    /// `log a(y, σ)`.
    pub fn log_a(&self, y: f64, sigma: f64) -> f64 {
        match *self {
            GlmFamily::Logistic => 0.0,
            GlmFamily::Binomial { trials } => {
                let n = f64::from(trials);
                ln_gamma(n + 1.0) - ln_gamma(y + 1.0) - ln_gamma(n - y + 1.0)
            }
            GlmFamily::Poisson => -ln_gamma(y + 1.0),
            GlmFamily::GaussianIdentity => {
                let s2 = sigma * sigma;
                -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - y * y / (2.0 * s2)
            }
        }
    }

    pub fn validate_response(&self, y: f64) -> bool {
        let integral = y.fract() == 0.0 && y >= 0.0;
        match *self {
            GlmFamily::Logistic => y == 0.0 || y == 1.0,
            GlmFamily::Binomial { trials } => integral && y <= f64::from(trials),
            GlmFamily::Poisson => integral,
            GlmFamily::GaussianIdentity => y.is_finite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "prior", rename_all = "snake_case")]
pub enum Prior {
    /// Mean-zero Gaussian with covariance `tau2 · I`.
    Gaussian { tau2: f64 },
    /// Improper constant prior; only for likelihood-level checks.
    Flat,
}

impl Prior {
    pub fn log_density(&self, beta: &[f64]) -> f64 {
        match *self {
            Prior::Gaussian { tau2 } => {
                let d = beta.len() as f64;
                let sq: f64 = beta.iter().map(|b| b * b).sum();
                -0.5 * d * (2.0 * std::f64::consts::PI * tau2).ln() - sq / (2.0 * tau2)
            }
            Prior::Flat => 0.0,
        }
    }

    pub fn grad(&self, beta: &[f64]) -> Vec<f64> {
        match *self {
            Prior::Gaussian { tau2 } => beta.iter().map(|b| -b / tau2).collect(),
            Prior::Flat => vec![0.0; beta.len()],
        }
    }

    /// Diagonal of the (diagonal) prior Hessian.
    pub fn hessian_diag(&self, d: usize) -> f64 {
        let _ = d;
        match *self {
            Prior::Gaussian { tau2 } => -1.0 / tau2,
            Prior::Flat => 0.0,
        }
    }
}

/// GLM with known dispersion and a prior on `β ∈ ℝᵈ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub family: GlmFamily,
    pub prior: Prior,
    pub d: usize,
    #[serde(default = "one")]
    pub dispersion: f64,
}

fn one() -> f64 {
    1.0
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl GlmModel {
    pub fn new(family: GlmFamily, prior: Prior, d: usize) -> Self {
        Self {
            family,
            prior,
            d,
            dispersion: 1.0,
        }
    }

    /// Logistic model with a `N(0, tau2 I)` prior.
    pub fn logistic(d: usize, tau2: f64) -> Self {
        Self::new(GlmFamily::Logistic, Prior::Gaussian { tau2 }, d)
    }

    fn dsig(&self) -> f64 {
        self.family.d_sigma(self.dispersion)
    }

    pub fn check(&self, data: &Dataset, beta: &[f64]) -> Result<()> {
        if data.d() != self.d {
            return Err(Error::DimensionMismatch {
                what: "dataset covariate dimension",
                expected: self.d,
                got: data.d(),
            });
        }
        if beta.len() != self.d {
            return Err(Error::DimensionMismatch {
                what: "parameter dimension",
                expected: self.d,
                got: beta.len(),
            });
        }
        Ok(())
    }

    pub fn validate_responses(&self, data: &Dataset) -> Result<()> {
        match data.responses().iter().position(|&y| !self.family.validate_response(y)) {
            Some(i) => Err(Error::InvalidData(format!(
                "response {} at index {i} is invalid for the {} family",
                data.response(i),
                self.family.name()
            ))),
            None => Ok(()),
        }
    }

    /// Log-likelihood without the prior.
    pub fn log_likelihood(&self, data: &Dataset, beta: &[f64]) -> f64 {
        (0..data.n()).map(|i| self.point_log_lik(data, i, beta)).sum()
    }

    #[inline]
    fn point_log_lik(&self, data: &Dataset, i: usize, beta: &[f64]) -> f64 {
        let y = data.response(i);
        let zeta = dot(data.row(i), beta);
        (zeta * y - self.family.c(zeta)) / self.dsig() + self.family.log_a(y, self.dispersion)
    }

    /// Unnormalised log posterior.
    pub fn log_posterior(&self, data: &Dataset, beta: &[f64]) -> Result<f64> {
        self.check(data, beta)?;
        Ok(self.prior.log_density(beta) + self.log_likelihood(data, beta))
    }

    /// Score of the log-likelihood, `Σᵢ xᵢᵀ(yᵢ − c'(xᵢβ))/d(σ)`.
    pub fn score(&self, data: &Dataset, beta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        let ds = self.dsig();
        for i in 0..data.n() {
            let x = data.row(i);
            let r = (data.response(i) - self.family.c1(dot(x, beta))) / ds;
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += xj * r;
            }
        }
        g
    }

    pub fn grad_log_posterior(&self, data: &Dataset, beta: &[f64]) -> Result<Vec<f64>> {
        self.check(data, beta)?;
        let mut g = self.score(data, beta);
        for (gj, pj) in g.iter_mut().zip(self.prior.grad(beta)) {
            *gj += pj;
        }
        Ok(g)
    }

    /// `J(x, β)`: Jacobian of the score in `β`, `−Σᵢ xᵢᵀxᵢ c''(xᵢβ)/d(σ)`.
    pub fn mle_jacobian(&self, data: &Dataset, beta: &[f64]) -> Result<DMatrix<f64>> {
        self.check(data, beta)?;
        let d = self.d;
        let ds = self.dsig();
        let mut j = DMatrix::zeros(d, d);
        for i in 0..data.n() {
            let x = data.row(i);
            let w = -self.family.c2(dot(x, beta)) / ds;
            for a in 0..d {
                for b in a..d {
                    j[(a, b)] += w * x[a] * x[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                j[(a, b)] = j[(b, a)];
            }
        }
        Ok(j)
    }

    pub fn hessian_log_posterior(&self, data: &Dataset, beta: &[f64]) -> Result<DMatrix<f64>> {
        let mut h = self.mle_jacobian(data, beta)?;
        let p = self.prior.hessian_diag(self.d);
        for a in 0..self.d {
            h[(a, a)] += p;
        }
        Ok(h)
    }

    /// `Dᵢⱼ = ∂ log p(θ | X) / ∂xᵢⱼ = βⱼ (yᵢ − c'(xᵢβ)) / d(σ)`.
    pub fn sensitivity_d(&self, data: &Dataset, beta: &[f64], i: usize, j: usize) -> Result<f64> {
        self.check(data, beta)?;
        if i >= data.n() {
            return Err(Error::IndexOutOfRange { index: i, n: data.n() });
        }
        if j >= self.d {
            return Err(Error::IndexOutOfRange { index: j, n: self.d });
        }
        let r = data.response(i) - self.family.c1(dot(data.row(i), beta));
        Ok(beta[j] * r / self.dsig())
    }

    /// `D_max`: the largest normalised second covariate-derivative of the
    /// posterior density,
    /// `max |βⱼβⱼ'| · |gᵢgᵢ' + 1{i=i'}(−c''(ζᵢ))| / d(σ)²` with `gᵢ = yᵢ − c'(ζᵢ)`.
    pub fn sensitivity_dmax(&self, data: &Dataset, beta: &[f64]) -> Result<f64> {
        self.check(data, beta)?;
        let ds = self.dsig();
        let bmax = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        let mut top = [0.0f64; 2];
        let mut diag = 0.0f64;
        for i in 0..data.n() {
            let zeta = dot(data.row(i), beta);
            let g = data.response(i) - self.family.c1(zeta);
            let a = g.abs();
            if a > top[0] {
                top[1] = top[0];
                top[0] = a;
            } else if a > top[1] {
                top[1] = a;
            }
            diag = diag.max((g * g - self.family.c2(zeta)).abs());
        }
        let off = if data.n() >= 2 { top[0] * top[1] } else { 0.0 };
        Ok(bmax * bmax * off.max(diag) / (ds * ds))
    }
}

impl Target for GlmModel {
    fn dim(&self) -> usize {
        self.d
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.prior.log_density(theta)
    }

    #[inline]
    fn log_lik_point(&self, data: &Dataset, i: usize, theta: &[f64]) -> f64 {
        self.point_log_lik(data, i, theta)
    }
}

const MLE_GRAD_TOL: f64 = 1e-10;
const MLE_MAX_ITER: usize = 200;
const SEPARATION_NORM: f64 = 1e6;
const SEPARATION_CURVATURE: f64 = 1e-9;

/// Maximum-likelihood estimate (prior excluded) by damped Newton with step
/// halving. Fails loudly on divergence or a singular information matrix
/// rather than returning a wrong answer.
pub fn mle(model: &GlmModel, data: &Dataset) -> Result<Vec<f64>> {
    let d = model.d;
    if data.d() != d {
        return Err(Error::DimensionMismatch {
            what: "dataset covariate dimension",
            expected: d,
            got: data.d(),
        });
    }
    if data.n() == 0 {
        return Err(Error::MleFailure("empty dataset".into()));
    }
    let mut beta = vec![0.0; d];
    let mut ll = model.log_likelihood(data, &beta);
    for _ in 0..MLE_MAX_ITER {
        let g = model.score(data, &beta);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < MLE_GRAD_TOL {
            check_curvature(model, data, &beta)?;
            return Ok(beta);
        }
        let info = -model.mle_jacobian(data, &beta)?;
        let chol = info.cholesky().ok_or_else(|| {
            Error::MleFailure(format!(
                "information matrix not positive definite at |beta| = {:.3e} (separation or collinear design)",
                norm(&beta)
            ))
        })?;
        let step = chol.solve(&DVector::from_vec(g));
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let cll = model.log_likelihood(data, &cand);
            // allow roundoff-level decreases near the optimum
            if cll.is_finite() && cll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                ll = cll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::MleFailure("step halving failed to increase the likelihood".into()));
        }
        if norm(&beta) > SEPARATION_NORM {
            return Err(Error::MleFailure(format!(
                "|beta| exceeded {SEPARATION_NORM:e}: data appear separated"
            )));
        }
    }
    Err(Error::MleFailure(format!("no convergence in {MLE_MAX_ITER} Newton iterations")))
}

/// Rejects a "converged" point whose information has collapsed relative to
/// the design Gram matrix. Under separation Newton crawls off to infinity
/// while the score decays like `e^{-|β|}`, so the gradient test alone would
/// accept a finite point that is not a maximiser.
fn check_curvature(model: &GlmModel, data: &Dataset, beta: &[f64]) -> Result<()> {
    let info = -model.mle_jacobian(data, beta)?;
    let x = data.covariate_matrix();
    let gram = x.transpose() * x;
    let min_info = info.symmetric_eigen().eigenvalues.min();
    let min_gram = gram.symmetric_eigen().eigenvalues.min();
    if min_info <= SEPARATION_CURVATURE * min_gram / model.dsig() {
        return Err(Error::MleFailure(format!(
            "information collapsed at |beta| = {:.3e}: data appear separated",
            norm(beta)
        )));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
