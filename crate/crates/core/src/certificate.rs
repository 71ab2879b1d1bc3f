//! Computer-checkable certificate for the non-degeneracy of the directional
//! derivatives of the GLM Jacobian, and an empirical monitor for the
//! smallest singular value of that Jacobian.
//!
//! For a canonical family `F(ζ) = −c''(ζ)`. A probe `(x, ξ)` gives a linear
//! functional on `v ∈ ℝ^m`, `m = d(d+1)/2`, indexed by pairs `j ≤ k`. The
//! certificate passes once the stacked functionals have rank `m`, so that no
//! nonzero `v` is annihilated by every probe.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::quantile;
use crate::models::{sample_dataset, CovariateLaw, GlmFamily, GlmModel};
use crate::rng::{standard_normal, uniform, RngStream};

pub const RANK_RTOL: f64 = 1e-8;

/// Pairs `(j, k)` with `j ≤ k`, in row-major order.
pub fn index_pairs(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|j| (j..d).map(move |k| (j, k))).collect()
}

/// Coefficients of `v` in the `ε`-derivative at 0 of
/// `Σ_{j≤k} [(x_k+εξ_k)F + (x_j+εξ_j)F + (x_j+εξ_j)(x_k+εξ_k)F'α] v_jk`,
/// with `F`, `F'` evaluated at `xᵀβ + εξᵀβ` and `α = Σβ_j`.
pub fn coefficient_vector(family: &GlmFamily, beta: &[f64], x: &[f64], xi: &[f64]) -> Vec<f64> {
    let zeta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
    let s: f64 = xi.iter().zip(beta).map(|(a, b)| a * b).sum();
    let alpha: f64 = beta.iter().sum();
    let f0 = -family.c2(zeta);
    let f1 = -family.c3(zeta);
    let f2 = -family.c4(zeta);
    index_pairs(beta.len())
        .into_iter()
        .map(|(j, k)| {
            (xi[k] + xi[j]) * f0
                + (x[k] + x[j]) * f1 * s
                + (xi[j] * x[k] + x[j] * xi[k]) * f1 * alpha
                + x[j] * x[k] * f2 * s * alpha
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub coefficients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateResult {
    pub verdict: Verdict,
    pub probes: Vec<Probe>,
    pub rank: usize,
    pub m: usize,
    pub singular_values: Vec<f64>,
    /// Basis of the common null space when inconclusive. A one-dimensional
    /// null space is scaled so its first nonzero entry is 1.
    pub null_space: Vec<Vec<f64>>,
}

struct RankInfo {
    rank: usize,
    singular_values: Vec<f64>,
    null_space: Vec<Vec<f64>>,
}

fn rank_info(rows: &[Vec<f64>], m: usize) -> RankInfo {
    // pad with zero rows so the SVD returns a full m × m right factor
    let r = rows.len().max(m);
    let mut a = DMatrix::zeros(r, m);
    for (i, row) in rows.iter().enumerate() {
        for j in 0..m {
            a[(i, j)] = row[j];
        }
    }
    let svd = a.svd(false, true);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let thr = RANK_RTOL * smax;
    let rank = if smax == 0.0 { 0 } else { sv.iter().filter(|&&s| s > thr).count() };
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut null_space: Vec<Vec<f64>> = (0..m)
        .filter(|&i| smax == 0.0 || sv[i] <= thr)
        .map(|i| vt.row(i).iter().copied().collect())
        .collect();
    if null_space.len() == 1 {
        let v = &mut null_space[0];
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if let Some(&lead) = v.iter().find(|x| x.abs() > 1e-8 * norm) {
            v.iter_mut().for_each(|x| *x /= lead);
        }
    }
    let mut sorted = sv;
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    sorted.truncate(m.min(rows.len()));
    RankInfo {
        rank,
        singular_values: sorted,
        null_space,
    }
}

/// Draws probes (`x` uniform on the box, `ξ` uniform on the sphere) until
/// the stacked coefficient matrix reaches rank `m` or `l_max` probes are
/// used.
pub fn certify(family: &GlmFamily, beta: &[f64], law: &CovariateLaw, l_max: usize, stream: RngStream) -> Result<CertificateResult> {
    let d = beta.len();
    law.validate()?;
    if law.dim() != d || d == 0 {
        return Err(Error::DimensionMismatch {
            what: "covariate box vs beta dimension",
            expected: d,
            got: law.dim(),
        });
    }
    let m = d * (d + 1) / 2;
    if l_max < m + 1 {
        return Err(Error::InvalidConfig(format!("l_max must be at least m + 1 = {}", m + 1)));
    }
    let (lo, hi) = law.bounds();
    let mut rng = stream.rng();
    let mut probes = Vec::new();
    let mut rows = Vec::new();
    let mut info = rank_info(&rows, m);
    for _ in 0..l_max {
        let x: Vec<f64> = (0..d).map(|j| lo[j] + (hi[j] - lo[j]) * uniform(&mut rng)).collect();
        let xi = loop {
            let g: Vec<f64> = (0..d).map(|_| standard_normal(&mut rng)).collect();
            let nrm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm > 0.0 {
                break g.into_iter().map(|v| v / nrm).collect::<Vec<_>>();
            }
        };
        let coefficients = coefficient_vector(family, beta, &x, &xi);
        rows.push(coefficients.clone());
        probes.push(Probe { x, xi, coefficients });
        info = rank_info(&rows, m);
        if info.rank == m {
            break;
        }
    }
    let pass = info.rank == m;
    Ok(CertificateResult {
        verdict: if pass { Verdict::Pass } else { Verdict::Inconclusive },
        probes,
        rank: info.rank,
        m,
        singular_values: info.singular_values,
        null_space: if pass { Vec::new() } else { info.null_space },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaMinRow {
    pub n: usize,
    pub q01: f64,
    pub q50: f64,
    /// 1% quantile of `σ_min / n`.
    pub q01_per_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaMinReport {
    pub rows: Vec<SigmaMinRow>,
    /// The 1% quantile of `σ_min / n` falls by more than a factor of 2
    /// across the sweep.
    pub shrinking: bool,
    /// Some 1% quantile of `σ_min / n` is numerically zero.
    pub degenerate: bool,
}

/// Samples datasets at each `n` and records quantiles of the smallest
/// singular value of the MLE Jacobian `J(X, β)`.
pub fn min_singular_monitor(
    model: &GlmModel,
    beta: &[f64],
    ns: &[usize],
    law: &CovariateLaw,
    replicates: usize,
    stream: RngStream,
) -> Result<SigmaMinReport> {
    if replicates == 0 || ns.is_empty() {
        return Err(Error::InvalidConfig("monitor needs replicates > 0 and a nonempty n grid".into()));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for (a, &n) in ns.iter().enumerate() {
        let sig: Vec<f64> = (0..replicates)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let data = sample_dataset(&model.family, beta, law, n, stream.child(a as u64).child(r as u64))?;
                let j = model.mle_jacobian(&data, beta)?;
                Ok(j.singular_values().min())
            })
            .collect::<Result<_>>()?;
        let q01 = quantile(&sig, 0.01);
        rows.push(SigmaMinRow {
            n,
            q01,
            q50: quantile(&sig, 0.5),
            q01_per_n: q01 / n as f64,
        });
    }
    let per_n: Vec<f64> = rows.iter().map(|r| r.q01_per_n).collect();
    let max = per_n.iter().copied().fold(0.0, f64::max);
    let min = per_n.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(SigmaMinReport {
        shrinking: min < 0.5 * max,
        degenerate: min < 1e-10,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_identity_coefficients() {
        let c = coefficient_vector(&GlmFamily::GaussianIdentity, &[0.4, -1.1], &[0.3, 0.9], &[0.6, 0.8]);
        let want = [-1.2, -1.4, -1.6];
        for (a, b) in c.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_direction_gives_zero_vector() {
        let c = coefficient_vector(&GlmFamily::Logistic, &[0.3, -0.2], &[0.5, 0.1], &[0.0, 0.0]);
        assert!(c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pass_is_monotone_and_deterministic() {
        let law = CovariateLaw::default_box(2);
        let a = certify(&GlmFamily::Logistic, &[0.3, -0.2], &law, 10, RngStream::new(3, 0)).unwrap();
        let b = certify(&GlmFamily::Logistic, &[0.3, -0.2], &law, 10, RngStream::new(3, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.verdict, Verdict::Pass);
        let mut rows: Vec<Vec<f64>> = a.probes.iter().map(|p| p.coefficients.clone()).collect();
        rows.push(coefficient_vector(&GlmFamily::Logistic, &[0.3, -0.2], &[0.1, 0.2], &[0.6, 0.8]));
        assert_eq!(rank_info(&rows, 3).rank, 3);
    }

    #[test]
    fn gaussian_identity_is_inconclusive_with_annihilator() {
        let law = CovariateLaw::default_box(2);
        let r = certify(&GlmFamily::GaussianIdentity, &[0.3, -0.2], &law, 8, RngStream::new(1, 0)).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert_eq!(r.rank, 2);
        assert_eq!(r.null_space.len(), 1);
        for (a, b) in r.null_space[0].iter().zip([1.0, -2.0, 1.0]) {
            assert!((a - b).abs() < 1e-10);
        }
        for p in &r.probes {
            let dot = p.coefficients[0] - 2.0 * p.coefficients[1] + p.coefficients[2];
            assert!(dot.abs() < 1e-14);
        }
    }

    #[test]
    fn one_dimensional_logistic_passes_immediately() {
        let law = CovariateLaw::default_box(1);
        let r = certify(&GlmFamily::Logistic, &[0.7], &law, 2, RngStream::new(2, 0)).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.probes.len(), 1);
        assert!(r.probes[0].coefficients[0] != 0.0);
    }

    #[test]
    fn logistic_at_zero_matches_gram() {
        let model = GlmModel::logistic(2, 1.0);
        let law = CovariateLaw::default_box(2);
        let data = sample_dataset(&model.family, &[0.0, 0.0], &law, 300, RngStream::new(5, 0)).unwrap();
        let j = model.mle_jacobian(&data, &[0.0, 0.0]).unwrap();
        let x = data.covariate_matrix();
        let gram_min = (x.transpose() * x).symmetric_eigen().eigenvalues.min();
        assert!((j.singular_values().min() - 0.25 * gram_min).abs() < 1e-9 * gram_min);
    }

    #[test]
    fn zero_column_is_flagged() {
        let model = GlmModel::logistic(2, 1.0);
        let law = CovariateLaw::UniformBox {
            lo: vec![-1.0, 0.0],
            hi: vec![1.0, 0.0],
        };
        let r = min_singular_monitor(&model, &[0.2, 0.0], &[50, 100], &law, 20, RngStream::new(0, 0)).unwrap();
        assert!(r.degenerate);
    }
}
