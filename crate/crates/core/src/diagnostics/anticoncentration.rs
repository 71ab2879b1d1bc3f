use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{uniform, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntiConcentration {
    /// Largest fraction of samples of `Σ vᵢXᵢ` in any window of width `ε`.
    pub max_mass: f64,
    /// `ρ_max · ε · √m`.
    pub bound: f64,
    /// Binomial standard error of `max_mass`.
    pub sigma_mc: f64,
    /// `max_mass ≤ bound + 3 σ_MC`.
    pub ok: bool,
}

/// Largest fraction of `sorted` lying in a closed window of width `eps`.
pub fn max_window_mass(sorted: &[f64], eps: f64) -> f64 {
    let mut best = 0;
    let mut hi = 0;
    for lo in 0..sorted.len() {
        while hi < sorted.len() && sorted[hi] <= sorted[lo] + eps {
            hi += 1;
        }
        best = best.max(hi - lo);
    }
    best as f64 / sorted.len().max(1) as f64
}

/// Monte Carlo check for i.i.d. `Xᵢ ~ U[lo, hi]` (density bound
/// `1/(hi − lo)`) and a unit vector `v`.
pub fn anticoncentration_check(
    v: &[f64],
    lo: f64,
    hi: f64,
    eps: f64,
    samples: usize,
    stream: RngStream,
) -> Result<AntiConcentration> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if v.is_empty() || (norm - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("v must be a unit vector, has norm {norm}")));
    }
    if !(hi > lo) || !(eps > 0.0) || samples == 0 {
        return Err(Error::InvalidConfig("need hi > lo, eps > 0 and samples > 0".into()));
    }
    let mut rng = stream.rng();
    let mut s: Vec<f64> = (0..samples)
        .map(|_| v.iter().map(|vi| vi * (lo + (hi - lo) * uniform(&mut rng))).sum())
        .collect();
    s.sort_unstable_by(f64::total_cmp);
    let max_mass = max_window_mass(&s, eps);
    let bound = eps * (v.len() as f64).sqrt() / (hi - lo);
    let sigma_mc = (max_mass * (1.0 - max_mass) / samples as f64).sqrt();
    Ok(AntiConcentration {
        max_mass,
        bound,
        sigma_mc,
        ok: max_mass <= bound + 3.0 * sigma_mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_mass_counts_closed_windows() {
        assert_eq!(max_window_mass(&[0.0, 0.1, 0.2, 0.5], 0.2), 0.75);
        assert_eq!(max_window_mass(&[], 1.0), 0.0);
    }

    #[test]
    fn single_uniform() {
        let r = anticoncentration_check(&[1.0], 0.0, 1.0, 0.1, 200_000, RngStream::new(1, 0)).unwrap();
        assert!((r.max_mass - 0.1).abs() < 0.01);
        assert!(r.ok);
    }

    #[test]
    fn degenerate_direction_reduces_to_one_variable() {
        let a = anticoncentration_check(&[1.0, 0.0, 0.0], 0.0, 1.0, 0.1, 100_000, RngStream::new(2, 0)).unwrap();
        assert!((a.max_mass - 0.1).abs() < 0.01);
        assert!(a.ok);
    }

    #[test]
    fn rejects_non_unit_vectors() {
        assert!(anticoncentration_check(&[1.0, 1.0], 0.0, 1.0, 0.1, 10, RngStream::new(0, 0)).is_err());
    }
}
