use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::Target;
use crate::dataset::Dataset;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Toy models with closed-form posteriors. Observations live in covariate
/// column 0 of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyModel {
    /// `μ ~ N(0,1)`, `yᵢ | μ ~ N(μ,1)`.
    GaussianHierarchy,
    /// Prior `e^{−θ}` on `θ > 0`, likelihood `∝ Πᵢ e^{−θ|yᵢ|}`.
    ExponentialTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ToyPosterior {
    Normal { mean: f64, var: f64 },
    Exponential { rate: f64 },
}

impl ToyModel {
    pub fn posterior(&self, data: &Dataset) -> ToyPosterior {
        let n = data.n() as f64;
        match self {
            ToyModel::GaussianHierarchy => {
                let sum: f64 = (0..data.n()).map(|i| data.row(i)[0]).sum();
                ToyPosterior::Normal {
                    mean: sum / (n + 1.0),
                    var: 1.0 / (n + 1.0),
                }
            }
            ToyModel::ExponentialTail => {
                let s: f64 = (0..data.n()).map(|i| data.row(i)[0].abs()).sum();
                ToyPosterior::Exponential { rate: 1.0 + s }
            }
        }
    }

    /// Posterior for the same model when the likelihood of a subset of size
    /// `m` is raised to the power `scale` (1 for the plain subsample
    /// posterior, `n/m` for the tempered one).
    pub fn scaled_posterior(&self, data: &Dataset, scale: f64) -> ToyPosterior {
        match self {
            ToyModel::GaussianHierarchy => {
                let sum: f64 = (0..data.n()).map(|i| data.row(i)[0]).sum();
                let prec = 1.0 + scale * data.n() as f64;
                ToyPosterior::Normal {
                    mean: scale * sum / prec,
                    var: 1.0 / prec,
                }
            }
            ToyModel::ExponentialTail => {
                let s: f64 = (0..data.n()).map(|i| data.row(i)[0].abs()).sum();
                ToyPosterior::Exponential { rate: 1.0 + scale * s }
            }
        }
    }
}

impl Target for ToyModel {
    fn dim(&self) -> usize {
        1
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        let t = theta[0];
        match self {
            ToyModel::GaussianHierarchy => -0.5 * t * t - LN_SQRT_2PI,
            ToyModel::ExponentialTail => {
                if t > 0.0 {
                    -t
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    #[inline]
    fn log_lik_point(&self, data: &Dataset, i: usize, theta: &[f64]) -> f64 {
        let y = data.row(i)[0];
        let t = theta[0];
        match self {
            ToyModel::GaussianHierarchy => -0.5 * (y - t) * (y - t) - LN_SQRT_2PI,
            ToyModel::ExponentialTail => -t * y.abs(),
        }
    }
}

impl ToyPosterior {
    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            ToyPosterior::Normal { mean, var } => {
                -0.5 * (x - mean) * (x - mean) / var - 0.5 * var.ln() - LN_SQRT_2PI
            }
            ToyPosterior::Exponential { rate } => {
                if x >= 0.0 {
                    rate.ln() - rate * x
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ToyPosterior::Normal { mean, var } => Normal::new(mean, var.sqrt())
                .map(|d| d.cdf(x))
                .unwrap_or(f64::NAN),
            ToyPosterior::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            ToyPosterior::Normal { mean, .. } => mean,
            ToyPosterior::Exponential { rate } => 1.0 / rate,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            ToyPosterior::Normal { var, .. } => var,
            ToyPosterior::Exponential { rate } => 1.0 / (rate * rate),
        }
    }

    /// An interval holding all but a negligible amount of mass.
    pub fn support_hint(&self) -> (f64, f64) {
        match *self {
            ToyPosterior::Normal { mean, var } => {
                let s = var.sqrt();
                (mean - 12.0 * s, mean + 12.0 * s)
            }
            ToyPosterior::Exponential { rate } => (0.0, 40.0 / rate),
        }
    }
}

/// Total variation distance between two toy posteriors in closed form.
///
/// For two Gaussians the densities cross at most twice; the distance is the
/// largest `|F₁(A) − F₂(A)|` over the regions cut out by the crossings.
pub fn closed_form_tv(p: &ToyPosterior, q: &ToyPosterior) -> f64 {
    match (*p, *q) {
        (ToyPosterior::Normal { mean: m1, var: v1 }, ToyPosterior::Normal { mean: m2, var: v2 }) => {
            let roots = gaussian_crossings(m1, v1, m2, v2);
            let mut cuts = vec![f64::NEG_INFINITY];
            cuts.extend(roots);
            cuts.push(f64::INFINITY);
            let mut tv = 0.0;
            for w in cuts.windows(2) {
                let a = p.cdf(w[1]) - p.cdf(w[0]);
                let b = q.cdf(w[1]) - q.cdf(w[0]);
                tv += (a - b).abs();
            }
            0.5 * tv
        }
        (ToyPosterior::Exponential { rate: a }, ToyPosterior::Exponential { rate: b }) => {
            if a == b {
                return 0.0;
            }
            let x = (a / b).ln() / (a - b);
            (p.cdf(x) - q.cdf(x)).abs()
        }
        _ => f64::NAN,
    }
}

fn gaussian_crossings(m1: f64, v1: f64, m2: f64, v2: f64) -> Vec<f64> {
    // log N(x; m1, v1) = log N(x; m2, v2) rearranged as a x² + b x + c = 0
    let a = 0.5 / v2 - 0.5 / v1;
    let b = m1 / v1 - m2 / v2;
    let c = 0.5 * m2 * m2 / v2 - 0.5 * m1 * m1 / v1 + 0.5 * (v2 / v1).ln();
    if a.abs() < 1e-300 {
        if b == 0.0 {
            return vec![];
        }
        return vec![-c / b];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut r = if q == 0.0 {
        vec![0.0]
    } else {
        vec![q / a, c / q]
    };
    r.sort_by(f64::total_cmp);
    r
}
