use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::glm::sigmoid;
use super::{GlmFamily, ToyModel};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, uniform, RngStream};

/// Covariate law `γ` on a compact box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    /// Product of uniforms on `[lo_j, hi_j]`. `lo_j == hi_j` pins a column,
    /// which is how an intercept is expressed.
    UniformBox { lo: Vec<f64>, hi: Vec<f64> },
    /// Independent Gaussians truncated to the box, sampled by rejection.
    TruncatedGaussian {
        mean: Vec<f64>,
        sd: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl CovariateLaw {
    /// Uniform on `[−1, 1]ᵈ`.
    pub fn default_box(d: usize) -> Self {
        CovariateLaw::UniformBox {
            lo: vec![-1.0; d],
            hi: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::UniformBox { lo, .. } | CovariateLaw::TruncatedGaussian { lo, .. } => lo.len(),
        }
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        match self {
            CovariateLaw::UniformBox { lo, hi } | CovariateLaw::TruncatedGaussian { lo, hi, .. } => (lo, hi),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidConfig("covariate box bounds must be nonempty and of equal length".into()));
        }
        if lo.iter().zip(hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a <= b)) {
            return Err(Error::InvalidConfig("covariate box needs finite lo <= hi".into()));
        }
        if let CovariateLaw::TruncatedGaussian { mean, sd, .. } = self {
            if mean.len() != lo.len() || sd.len() != lo.len() || sd.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::InvalidConfig("truncated Gaussian needs mean/sd per column with sd > 0".into()));
            }
        }
        Ok(())
    }

    pub fn contains(&self, row: &[f64]) -> bool {
        let (lo, hi) = self.bounds();
        row.len() == lo.len() && row.iter().zip(lo.iter().zip(hi)).all(|(x, (a, b))| *a <= *x && *x <= *b)
    }

    /// Unnormalised log density of one row; `−∞` outside the box.
    pub fn log_density(&self, row: &[f64]) -> f64 {
        if !self.contains(row) {
            return f64::NEG_INFINITY;
        }
        match self {
            CovariateLaw::UniformBox { .. } => 0.0,
            CovariateLaw::TruncatedGaussian { mean, sd, lo, hi } => row
                .iter()
                .enumerate()
                .filter(|&(j, _)| lo[j] < hi[j])
                .map(|(j, x)| -0.5 * ((x - mean[j]) / sd[j]).powi(2))
                .sum(),
        }
    }

    fn draw_row<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            CovariateLaw::UniformBox { lo, hi } => {
                for (j, x) in out.iter_mut().enumerate() {
                    *x = lo[j] + (hi[j] - lo[j]) * uniform(rng);
                }
            }
            CovariateLaw::TruncatedGaussian { mean, sd, lo, hi } => {
                for (j, x) in out.iter_mut().enumerate() {
                    if lo[j] == hi[j] {
                        *x = lo[j];
                        continue;
                    }
                    *x = loop {
                        let v = mean[j] + sd[j] * standard_normal(rng);
                        if v >= lo[j] && v <= hi[j] {
                            break v;
                        }
                    };
                }
            }
        }
    }
}

/// Draws `n` covariate rows from `γ` and responses from the family at `β₀`.
pub fn sample_dataset(
    family: &GlmFamily,
    beta0: &[f64],
    gamma: &CovariateLaw,
    n: usize,
    stream: RngStream,
) -> Result<Dataset> {
    gamma.validate()?;
    let d = gamma.dim();
    if beta0.len() != d {
        return Err(Error::DimensionMismatch {
            what: "beta0 vs covariate law dimension",
            expected: d,
            got: beta0.len(),
        });
    }
    let mut rng = stream.rng();
    let mut cov = vec![0.0; n * d];
    let mut resp = Vec::with_capacity(n);
    for row in cov.chunks_exact_mut(d) {
        gamma.draw_row(&mut rng, row);
        let eta: f64 = row.iter().zip(beta0).map(|(a, b)| a * b).sum();
        let y = match *family {
            GlmFamily::Logistic => f64::from(u8::from(uniform(&mut rng) < sigmoid(eta))),
            GlmFamily::Binomial { trials } => {
                let b = Binomial::new(u64::from(trials), sigmoid(eta))
                    .map_err(|e| Error::InvalidConfig(format!("binomial: {e}")))?;
                b.sample(&mut rng) as f64
            }
            GlmFamily::Poisson => {
                let p = Poisson::new(eta.exp()).map_err(|e| Error::InvalidConfig(format!("poisson: {e}")))?;
                p.sample(&mut rng)
            }
            GlmFamily::GaussianIdentity => eta + standard_normal(&mut rng),
        };
        resp.push(y);
    }
    Ok(Dataset::new(cov, resp, d)?.with_true_param(beta0.to_vec()))
}

/// Draws observations for a toy model.
///
/// Gaussian hierarchy: `μ ~ N(0,1)`, then `yᵢ ~ N(μ,1)`; the drawn `μ` is
/// stored as the true parameter. Exponential tail: `yᵢ` Laplace with rate
/// `theta0`.
pub fn sample_toy_dataset(toy: ToyModel, n: usize, theta0: Option<f64>, stream: RngStream) -> Dataset {
    let mut rng = stream.rng();
    match toy {
        ToyModel::GaussianHierarchy => {
            let mu = theta0.unwrap_or_else(|| standard_normal(&mut rng));
            let ys = (0..n).map(|_| mu + standard_normal(&mut rng)).collect();
            Dataset::observations(ys).with_true_param(vec![mu])
        }
        ToyModel::ExponentialTail => {
            let rate = theta0.unwrap_or(0.5);
            let ys = (0..n)
                .map(|_| {
                    let e = -(1.0 - uniform(&mut rng)).ln() / rate;
                    if uniform(&mut rng) < 0.5 {
                        -e
                    } else {
                        e
                    }
                })
                .collect();
            Dataset::observations(ys).with_true_param(vec![rate])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_zero_is_fair() {
        let ds = sample_dataset(&GlmFamily::Logistic, &[0.0, 0.0], &CovariateLaw::default_box(2), 10_000, RngStream::new(1, 0)).unwrap();
        let mean = ds.responses().iter().sum::<f64>() / 1e4;
        assert!((0.45..=0.55).contains(&mean));
        assert!(ds.covariates().iter().all(|x| (-1.0..=1.0).contains(x)));
    }

    #[test]
    fn poisson_mean_four() {
        let law = CovariateLaw::UniformBox { lo: vec![1.0], hi: vec![1.0] };
        let ds = sample_dataset(&GlmFamily::Poisson, &[4f64.ln()], &law, 10_000, RngStream::new(2, 0)).unwrap();
        let mean = ds.responses().iter().sum::<f64>() / 1e4;
        assert!((mean - 4.0).abs() < 0.2);
    }

    #[test]
    fn truncated_gaussian_stays_in_box() {
        let law = CovariateLaw::TruncatedGaussian {
            mean: vec![0.0, 0.5],
            sd: vec![1.0, 2.0],
            lo: vec![-0.5, -1.0],
            hi: vec![0.5, 1.0],
        };
        let ds = sample_dataset(&GlmFamily::Logistic, &[1.0, 1.0], &law, 2000, RngStream::new(3, 0)).unwrap();
        for i in 0..ds.n() {
            let r = ds.row(i);
            assert!(r[0].abs() <= 0.5 && r[1].abs() <= 1.0);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_dataset(&GlmFamily::Logistic, &[1.0], &CovariateLaw::default_box(1), 100, RngStream::new(9, 4)).unwrap();
        let b = sample_dataset(&GlmFamily::Logistic, &[1.0], &CovariateLaw::default_box(1), 100, RngStream::new(9, 4)).unwrap();
        assert_eq!(a, b);
    }
}
