use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IatEstimate {
    /// Integrated autocorrelation time `1 + 2 Σ_{k≥1} ρ_k`.
    pub iat: f64,
    pub ess: f64,
    /// Asymptotic variance estimate `Var(φ) · IAT`.
    pub asvar: f64,
    pub variance: f64,
    /// False when the trace is shorter than 10³, constant, or the IAT
    /// exceeds a tenth of its length.
    pub reliable: bool,
}

/// Biased autocovariances `γ_k` for `k < n` via zero-padded FFT.
pub fn autocovariance(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(size).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    buf[..n].iter().map(|c| c.re / (size as f64 * n as f64)).collect()
}

/// Geyer's initial monotone sequence estimator.
pub fn iat_ess(x: &[f64]) -> Result<IatEstimate> {
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidData("IAT needs at least two samples".into()));
    }
    let gamma = autocovariance(x);
    let g0 = gamma[0];
    if !(g0 > 0.0) {
        return Ok(IatEstimate {
            iat: f64::INFINITY,
            ess: 0.0,
            asvar: 0.0,
            variance: 0.0,
            reliable: false,
        });
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = gamma[2 * m] + gamma[2 * m + 1];
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        m += 1;
    }
    let iat = (-1.0 + 2.0 * sum / g0).max(f64::MIN_POSITIVE);
    Ok(IatEstimate {
        iat,
        ess: n as f64 / iat,
        asvar: g0 * iat,
        variance: g0,
        reliable: n >= 1000 && iat <= n as f64 / 10.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, RngStream};

    #[test]
    fn autocovariance_matches_direct_sum() {
        let x = [0.3, -1.2, 0.7, 2.0, -0.4, 0.1];
        let g = autocovariance(&x);
        let mean = x.iter().sum::<f64>() / 6.0;
        for k in 0..6 {
            let direct: f64 = (0..6 - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum::<f64>() / 6.0;
            assert!((g[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn iid_trace() {
        let mut rng = RngStream::new(1, 0).rng();
        let x: Vec<f64> = (0..100_000).map(|_| standard_normal(&mut rng)).collect();
        let e = iat_ess(&x).unwrap();
        assert!((0.8..=1.2).contains(&e.iat), "{}", e.iat);
        assert!(e.reliable);
    }

    #[test]
    fn ar1_trace() {
        let mut rng = RngStream::new(2, 0).rng();
        let phi: f64 = 0.9;
        let mut v = 0.0;
        let x: Vec<f64> = (0..1_000_000)
            .map(|_| {
                v = phi * v + (1.0 - phi * phi).sqrt() * standard_normal(&mut rng);
                v
            })
            .collect();
        let e = iat_ess(&x).unwrap();
        assert!((e.iat - 19.0).abs() < 0.2 * 19.0, "{}", e.iat);
    }

    #[test]
    fn constant_trace_is_unreliable() {
        let e = iat_ess(&vec![1.5; 5000]).unwrap();
        assert!(!e.reliable);
    }
}
