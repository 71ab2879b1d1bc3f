use std::sync::Arc;

use nalgebra::DMatrix;

use super::{finish_used, propose, Aux, Kernel, KernelState, Transition};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::models::{mle, GlmFamily, GlmModel, Target};
use crate::rng::{sample_without_replacement, uniform, StreamRng};

fn jj_lambda(xi: f64) -> f64 {
    if xi.abs() < 1e-6 {
        0.125 - xi * xi / 96.0
    } else {
        (0.5 * xi).tanh() / (4.0 * xi)
    }
}

fn log_sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        -(-s).exp().ln_1p()
    } else {
        s - s.exp().ln_1p()
    }
}

/// Jaakkola–Jordan quadratic lower bound on `log σ(s)`, tight at `s = ±ξ`:
/// `log σ(ξ) + (s − ξ)/2 − λ(ξ)(s² − ξ²)` with `λ(ξ) = tanh(ξ/2)/(4ξ)`.
pub fn jaakkola_jordan_log_bound(s: f64, xi: f64) -> f64 {
    log_sigmoid(xi) + 0.5 * (s - xi) - jj_lambda(xi) * (s * s - xi * xi)
}

/// Exact firefly data augmentation for logistic regression.
///
/// Each datum carries a brightness bit. Dark points contribute only their
/// lower bound `Bᵢ(β)`, whose product over all data is a precomputed
/// Gaussian-form function of `β`; bright points contribute `Lᵢ − Bᵢ`. The
/// `β`-move touches only bright points and a random fraction of the bits is
/// refreshed after each move.
#[derive(Clone)]
pub struct Firefly {
    target: Arc<dyn Target>,
    model: GlmModel,
    pub scale: f64,
    pub exponent: f64,
    pub resample_fraction: f64,
    log_kappa: f64,
    xi: Vec<f64>,
    lambda: Vec<f64>,
    // Σᵢ log Bᵢ(β) = total_const + total_lin·β − βᵀ total_quad β
    total_const: f64,
    total_lin: Vec<f64>,
    total_quad: DMatrix<f64>,
    pub initial_bright: bool,
}

impl Firefly {
    /// Builds the bounds anchored at the MLE linear predictor. `bound_scale`
    /// `κ ∈ (0, 1]` multiplies every bound; `κ < 1` keeps `Bᵢ < Lᵢ` strictly.
    pub fn new(model: GlmModel, data: &Dataset, scale: f64, resample_fraction: f64, bound_scale: f64) -> Result<Self> {
        let beta_hat = mle(&model, data)?;
        Self::with_anchor(model, data, &beta_hat, scale, resample_fraction, bound_scale)
    }

    pub fn with_anchor(
        model: GlmModel,
        data: &Dataset,
        anchor: &[f64],
        scale: f64,
        resample_fraction: f64,
        bound_scale: f64,
    ) -> Result<Self> {
        if model.family != GlmFamily::Logistic {
            return Err(Error::Unsupported(format!(
                "firefly bounds are defined for the logistic family, not {}",
                model.family.name()
            )));
        }
        model.check(data, anchor)?;
        model.validate_responses(data)?;
        if !(resample_fraction > 0.0 && resample_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "resample fraction must lie in (0, 1], got {resample_fraction}"
            )));
        }
        if !(bound_scale > 0.0 && bound_scale <= 1.0) {
            return Err(Error::InvalidConfig(format!("bound scale must lie in (0, 1], got {bound_scale}")));
        }
        let (n, d) = (data.n(), data.d());
        let log_kappa = bound_scale.ln();
        let mut xi = Vec::with_capacity(n);
        let mut lambda = Vec::with_capacity(n);
        let mut total_const = 0.0;
        let mut total_lin = vec![0.0; d];
        let mut total_quad = DMatrix::zeros(d, d);
        for i in 0..n {
            let x = data.row(i);
            let sign = 2.0 * data.response(i) - 1.0;
            let x_i: f64 = x.iter().zip(anchor).map(|(a, b)| a * b).sum::<f64>().abs();
            let l = jj_lambda(x_i);
            total_const += log_kappa + log_sigmoid(x_i) - 0.5 * x_i + l * x_i * x_i;
            for a in 0..d {
                total_lin[a] += 0.5 * sign * x[a];
                for b in 0..d {
                    total_quad[(a, b)] += l * x[a] * x[b];
                }
            }
            xi.push(x_i);
            lambda.push(l);
        }
        Ok(Self {
            target: Arc::new(model),
            model,
            scale,
            exponent: 0.5,
            resample_fraction,
            log_kappa,
            xi,
            lambda,
            total_const,
            total_lin,
            total_quad,
            initial_bright: false,
        })
    }

    pub fn with_exponent(mut self, exponent: f64) -> Self {
        self.exponent = exponent;
        self
    }

    pub fn model(&self) -> &GlmModel {
        &self.model
    }

    #[inline]
    fn margin(data: &Dataset, i: usize, beta: &[f64]) -> f64 {
        let sign = 2.0 * data.response(i) - 1.0;
        sign * data.row(i).iter().zip(beta).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `(log Bᵢ(β), log Lᵢ(β))`, failing if the bound is violated.
    pub fn log_bound_and_lik(&self, data: &Dataset, i: usize, beta: &[f64]) -> Result<(f64, f64)> {
        let s = Self::margin(data, i, beta);
        let xi = self.xi[i];
        let log_b = self.log_kappa + log_sigmoid(xi) + 0.5 * (s - xi) - self.lambda[i] * (s * s - xi * xi);
        let log_l = log_sigmoid(s);
        if log_b > log_l + 1e-12 * log_l.abs().max(1.0) {
            return Err(Error::BoundViolation {
                index: i,
                log_bound: log_b,
                log_lik: log_l,
            });
        }
        Ok((log_b, log_l))
    }

    fn bound_total(&self, beta: &[f64]) -> f64 {
        let d = beta.len();
        let mut q = 0.0;
        for a in 0..d {
            for b in 0..d {
                q += beta[a] * self.total_quad[(a, b)] * beta[b];
            }
        }
        self.total_const + self.total_lin.iter().zip(beta).map(|(g, b)| g * b).sum::<f64>() - q
    }

    /// `log(Lᵢ − Bᵢ) − log Bᵢ`.
    fn bright_term(&self, data: &Dataset, i: usize, beta: &[f64]) -> Result<f64> {
        let (lb, ll) = self.log_bound_and_lik(data, i, beta)?;
        let log_gap = ll + (-(lb - ll).exp_m1()).ln();
        Ok(log_gap - lb)
    }

    /// Log of the augmented target at `(β, z)` restricted to the bright set.
    fn log_joint(&self, data: &Dataset, bright: &[usize], beta: &[f64]) -> Result<f64> {
        let mut v = self.target.log_prior(beta) + self.bound_total(beta);
        for &i in bright {
            v += self.bright_term(data, i, beta)?;
        }
        Ok(v)
    }

    /// Fraction of bright points in a state.
    pub fn bright_fraction(state: &KernelState) -> f64 {
        match &state.aux {
            Aux::Brightness(z) if !z.is_empty() => z.iter().filter(|&&b| b).count() as f64 / z.len() as f64,
            _ => 0.0,
        }
    }
}

impl Kernel for Firefly {
    fn name(&self) -> &'static str {
        "firefly"
    }

    fn target(&self) -> &Arc<dyn Target> {
        &self.target
    }

    fn init_state(&self, theta: Vec<f64>, data: &Dataset) -> Result<KernelState> {
        self.model.check(data, &theta)?;
        if data.n() != self.xi.len() {
            return Err(Error::DimensionMismatch {
                what: "firefly bounds vs dataset size",
                expected: self.xi.len(),
                got: data.n(),
            });
        }
        Ok(KernelState {
            theta,
            aux: Aux::Brightness(vec![self.initial_bright; data.n()]),
        })
    }

    fn step(&self, state: &KernelState, data: &Dataset, rng: &mut StreamRng) -> Result<Transition> {
        let n = data.n();
        let z = match &state.aux {
            Aux::Brightness(z) if z.len() == n => z,
            _ => return Err(Error::InvalidData("firefly state needs a brightness vector of length n".into())),
        };
        let bright: Vec<usize> = (0..n).filter(|&i| z[i]).collect();
        let proposal = propose(&state.theta, super::half_width(self.scale, self.exponent, n), rng);
        let log_u = uniform(rng).ln();
        let cur = self.log_joint(data, &bright, &state.theta)?;
        let prop = self.log_joint(data, &bright, &proposal)?;
        let accepted = log_u < prop - cur;
        let theta = if accepted { proposal } else { state.theta.clone() };

        let m = ((self.resample_fraction * n as f64).ceil() as usize).min(n);
        let refresh = sample_without_replacement(rng, n, m);
        let mut z_new = z.clone();
        for &i in &refresh {
            let (lb, ll) = self.log_bound_and_lik(data, i, &theta)?;
            let p_bright = -(lb - ll).exp_m1();
            z_new[i] = uniform(rng) < p_bright;
        }
        let mut used = bright;
        used.extend(refresh);
        Ok(Transition {
            state: KernelState {
                theta,
                aux: Aux::Brightness(z_new),
            },
            used: finish_used(used),
            accepted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{sample_dataset, CovariateLaw};
    use crate::rng::RngStream;

    fn setup(n: usize) -> (GlmModel, Dataset) {
        let model = GlmModel::logistic(1, 4.0);
        let data = sample_dataset(&model.family, &[1.5], &CovariateLaw::default_box(1), n, RngStream::new(31, 0)).unwrap();
        (model, data)
    }

    #[test]
    fn bound_is_tight_at_anchor_and_below_elsewhere() {
        for xi in [0.0, 0.3, 1.7, 6.0] {
            assert!((jaakkola_jordan_log_bound(xi, xi) - log_sigmoid(xi)).abs() < 1e-14);
            assert!((jaakkola_jordan_log_bound(-xi, xi) - log_sigmoid(-xi)).abs() < 1e-12);
            for s in [-20.0, -3.0, -0.5, 0.0, 0.2, 2.5, 11.0] {
                assert!(jaakkola_jordan_log_bound(s, xi) <= log_sigmoid(s) + 1e-14);
            }
        }
    }

    #[test]
    fn bound_totals_match_pointwise_sum() {
        let (model, data) = setup(40);
        let ff = Firefly::new(model, &data, 1.0, 0.5, 0.7).unwrap();
        for beta in [[0.0], [1.3], [-2.2]] {
            let direct: f64 = (0..40).map(|i| ff.log_bound_and_lik(&data, i, &beta).unwrap().0).sum();
            assert!((direct - ff.bound_total(&beta)).abs() < 1e-10);
        }
    }

    #[test]
    fn all_bright_step_is_mh_on_gap_target() {
        let (model, data) = setup(30);
        let ff = Firefly::new(model, &data, 1.0, 0.3, 0.5).unwrap();
        let state = KernelState {
            theta: vec![1.0],
            aux: Aux::Brightness(vec![true; 30]),
        };
        let mut rng = RngStream::new(4, 0).rng();
        for _ in 0..200 {
            let mut probe = rng.clone();
            let prop = propose(&state.theta, super::super::half_width(1.0, 0.5, 30), &mut probe);
            let log_u = uniform(&mut probe).ln();
            let gap = |b: &[f64]| -> f64 {
                model.prior.log_density(b)
                    + (0..30)
                        .map(|i| {
                            let (lb, ll) = ff.log_bound_and_lik(&data, i, b).unwrap();
                            ll + (-(lb - ll).exp_m1()).ln()
                        })
                        .sum::<f64>()
            };
            let expect = log_u < gap(&prop) - gap(&state.theta);
            let tr = ff.step(&state, &data, &mut rng).unwrap();
            assert_eq!(tr.accepted, expect);
        }
    }

    #[test]
    fn random_bound_probes() {
        let (model, data) = setup(100);
        let ff = Firefly::new(model, &data, 1.0, 0.5, 1.0).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        for _ in 0..100_000 {
            let beta = [20.0 * (uniform(&mut rng) - 0.5)];
            let i = (uniform(&mut rng) * 100.0) as usize;
            ff.log_bound_and_lik(&data, i, &beta).unwrap();
        }
    }

    #[test]
    fn rejects_non_logistic() {
        let model = GlmModel::new(GlmFamily::Poisson, crate::models::Prior::Flat, 1);
        let data = Dataset::new(vec![1.0, 0.5], vec![1.0, 2.0], 1).unwrap();
        assert!(matches!(
            Firefly::with_anchor(model, &data, &[0.0], 1.0, 0.5, 0.5),
            Err(Error::Unsupported(_))
        ));
    }
}
