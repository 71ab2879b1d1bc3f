//! Finite-state transition matrices: discretisation of kernels, spectral and
//! pseudo-spectral gaps, and the worst-case asymptotic variance.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::kernels::Kernel;
use crate::rng::{uniform, RngStream};

/// Equal-width cells on a box in one or two dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub cells: Vec<usize>,
}

impl GridSpec {
    pub fn one_d(lo: f64, hi: f64, cells: usize) -> Self {
        Self {
            lo: vec![lo],
            hi: vec![hi],
            cells: vec![cells],
        }
    }

    /// Cells spanning `mean ± width_sd · sd` in each coordinate.
    pub fn around(mean: &[f64], sd: &[f64], width_sd: f64, cells: usize) -> Self {
        Self {
            lo: mean.iter().zip(sd).map(|(m, s)| m - width_sd * s).collect(),
            hi: mean.iter().zip(sd).map(|(m, s)| m + width_sd * s).collect(),
            cells: vec![cells; mean.len()],
        }
    }

    pub fn dim(&self) -> usize {
        self.cells.len()
    }

    pub fn len(&self) -> usize {
        self.cells.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let d = self.cells.len();
        if !(d == 1 || d == 2) || self.lo.len() != d || self.hi.len() != d {
            return Err(Error::Unsupported("discretisation grids must be 1- or 2-dimensional".into()));
        }
        if self.cells.iter().any(|&c| c == 0) || self.lo.iter().zip(&self.hi).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidConfig("grid needs lo < hi and at least one cell per axis".into()));
        }
        Ok(())
    }

    fn width(&self, j: usize) -> f64 {
        (self.hi[j] - self.lo[j]) / self.cells[j] as f64
    }

    /// Multi-index of a flat cell index (first axis slowest).
    fn unflatten(&self, mut c: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for j in (0..self.dim()).rev() {
            idx[j] = c % self.cells[j];
            c /= self.cells[j];
        }
        idx
    }

    pub fn center(&self, c: usize) -> Vec<f64> {
        self.unflatten(c)
            .iter()
            .enumerate()
            .map(|(j, &i)| self.lo[j] + (i as f64 + 0.5) * self.width(j))
            .collect()
    }

    /// Cell containing `x`; points outside the box go to the nearest edge
    /// cell.
    pub fn locate(&self, x: &[f64]) -> usize {
        let mut c = 0;
        for j in 0..self.dim() {
            let raw = ((x[j] - self.lo[j]) / self.width(j)).floor();
            let i = if raw < 0.0 {
                0
            } else {
                (raw as usize).min(self.cells[j] - 1)
            };
            c = c * self.cells[j] + i;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    pub p: DMatrix<f64>,
    pub grid: Option<GridSpec>,
}

pub const MIN_DRAWS_PER_CELL: usize = 10_000;

impl TransitionMatrix {
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        let t = Self { p, grid: None };
        t.check()?;
        Ok(t)
    }

    pub fn size(&self) -> usize {
        self.p.nrows()
    }

    pub fn check(&self) -> Result<()> {
        if !self.p.is_square() || self.p.nrows() == 0 {
            return Err(Error::InvalidData("transition matrix must be square and nonempty".into()));
        }
        for i in 0..self.p.nrows() {
            let row = self.p.row(i);
            if row.iter().any(|&v| !(v >= 0.0)) {
                return Err(Error::InvalidData(format!("row {i} has a negative or NaN entry")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidData(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(())
    }

    /// `(I + P)/2`.
    pub fn half_lazy(&self) -> Self {
        let n = self.size();
        Self {
            p: (DMatrix::identity(n, n) + &self.p) * 0.5,
            grid: self.grid.clone(),
        }
    }

    /// Stationary distribution from `πᵀ(P − I) = 0`, `Σπ = 1`.
    pub fn stationary(&self) -> Result<DVector<f64>> {
        let n = self.size();
        let mut a = self.p.transpose() - DMatrix::identity(n, n);
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::zeros(n);
        b[n - 1] = 1.0;
        let pi = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Singular("stationary distribution is not unique".into()))?;
        Ok(pi.map(|v| v.max(0.0)) / pi.iter().map(|v| v.max(0.0)).sum::<f64>())
    }

    /// Largest `|πᵢPᵢⱼ − πⱼPⱼᵢ|`.
    pub fn detailed_balance_asymmetry(&self, pi: &DVector<f64>) -> f64 {
        let n = self.size();
        let mut m = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                m = m.max((pi[i] * self.p[(i, j)] - pi[j] * self.p[(j, i)]).abs());
            }
        }
        m
    }

    pub fn is_reversible(&self, pi: &DVector<f64>, tol: f64) -> bool {
        self.detailed_balance_asymmetry(pi) <= tol
    }

    /// `D^{1/2} P D^{−1/2}` symmetrised, `D = diag(π)`.
    fn symmetrised(&self, pi: &DVector<f64>) -> DMatrix<f64> {
        let n = self.size();
        let sq: Vec<f64> = pi.iter().map(|v| v.sqrt()).collect();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if sq[i] > 0.0 && sq[j] > 0.0 {
                    s[(i, j)] = sq[i] * self.p[(i, j)] / sq[j];
                }
            }
        }
        (&s + s.transpose()) * 0.5
    }

    /// `π`-adjoint `P*ᵢⱼ = πⱼ Pⱼᵢ / πᵢ`.
    pub fn adjoint(&self, pi: &DVector<f64>) -> DMatrix<f64> {
        let n = self.size();
        DMatrix::from_fn(n, n, |i, j| if pi[i] > 0.0 { pi[j] * self.p[(j, i)] / pi[i] } else { 0.0 })
    }
}

/// Per-cell Monte Carlo (Ulam) discretisation: from each cell, start
/// `draws` chains uniformly inside the cell, take one kernel step, and count
/// destination cells. Each cell uses its own child stream, so the result
/// does not depend on thread scheduling.
pub fn discretize(
    kernel: &dyn Kernel,
    data: &Dataset,
    grid: &GridSpec,
    draws: usize,
    stream: RngStream,
) -> Result<TransitionMatrix> {
    grid.validate()?;
    if kernel.target().dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            what: "grid dimension vs parameter dimension",
            expected: kernel.target().dim(),
            got: grid.dim(),
        });
    }
    let draws = draws.max(MIN_DRAWS_PER_CELL);
    let cells = grid.len();
    let rows: Vec<Vec<f64>> = (0..cells)
        .into_par_iter()
        .map(|c| -> Result<Vec<f64>> {
            let mut rng = stream.child(c as u64).rng();
            let idx = grid.unflatten(c);
            let mut counts = vec![0.0; cells];
            for _ in 0..draws {
                let theta: Vec<f64> = (0..grid.dim())
                    .map(|j| grid.lo[j] + (idx[j] as f64 + uniform(&mut rng)) * grid.width(j))
                    .collect();
                let state = kernel.init_state(theta, data)?;
                let tr = kernel.step(&state, data, &mut rng)?;
                counts[grid.locate(&tr.state.theta)] += 1.0;
            }
            Ok(counts.into_iter().map(|v| v / draws as f64).collect())
        })
        .collect::<Result<_>>()?;
    let mut p = DMatrix::zeros(cells, cells);
    for (i, row) in rows.iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidData(format!("discretised row {i} sums to {s}")));
        }
        for (j, v) in row.iter().enumerate() {
            p[(i, j)] = v / s;
        }
    }
    Ok(TransitionMatrix {
        p,
        grid: Some(grid.clone()),
    })
}

fn remove_nearest_one(mut moduli_and_vals: Vec<(f64, f64)>) -> f64 {
    // (modulus, distance to 1); drop the eigenvalue closest to 1
    let (pos, _) = moduli_and_vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("nonempty spectrum");
    moduli_and_vals.remove(pos);
    moduli_and_vals.iter().map(|v| v.0).fold(0.0, f64::max)
}

/// Absolute spectral gap `1 − max{|λ| : λ ≠ 1}` where exactly one unit
/// eigenvalue (the Perron root) is removed.
pub fn spectral_gap(t: &TransitionMatrix) -> Result<f64> {
    t.check()?;
    if t.size() == 1 {
        return Ok(1.0);
    }
    if let Ok(pi) = t.stationary() {
        if pi.iter().all(|&v| v > 0.0) && t.is_reversible(&pi, 1e-14) {
            return spectral_gap_reversible(t, &pi);
        }
    }
    spectral_gap_general(t)
}

/// Gap of a reversible matrix through the symmetric similarity transform.
pub fn spectral_gap_reversible(t: &TransitionMatrix, pi: &DVector<f64>) -> Result<f64> {
    let eig = t.symmetrised(pi).symmetric_eigen();
    let v: Vec<(f64, f64)> = eig.eigenvalues.iter().map(|&l| (l.abs(), (l - 1.0).abs())).collect();
    Ok((1.0 - remove_nearest_one(v)).clamp(0.0, 1.0))
}

/// Gap from the complex spectrum of the real Schur form.
pub fn spectral_gap_general(t: &TransitionMatrix) -> Result<f64> {
    let schur = nalgebra::linalg::Schur::try_new(t.p.clone(), 1e-14, 100_000)
        .ok_or_else(|| Error::Eigen("Schur decomposition did not converge".into()))?;
    let ev = schur.complex_eigenvalues();
    let v: Vec<(f64, f64)> = ev.iter().map(|z| (z.norm(), (z - 1.0).norm())).collect();
    Ok((1.0 - remove_nearest_one(v)).clamp(0.0, 1.0))
}

/// Gap of a self-adjoint (w.r.t. `π`) matrix with spectrum in `[0, 1]`.
fn reversible_gap_matrix(m: &DMatrix<f64>, pi: &DVector<f64>) -> Result<f64> {
    let t = TransitionMatrix {
        p: m.clone(),
        grid: None,
    };
    spectral_gap_reversible(&t, pi)
}

pub const DEFAULT_S_MAX: usize = 50;

/// Pseudo-spectral gap `max_{s ≤ S_max} gap((P*)ˢ Pˢ) / s`, returning the
/// value and the maximising `s`.
pub fn pseudo_spectral_gap(t: &TransitionMatrix, s_max: usize) -> Result<(f64, usize)> {
    t.check()?;
    let pi = t.stationary()?;
    let adj = t.adjoint(&pi);
    let mut pk = t.p.clone();
    let mut ak = adj.clone();
    let mut best = (0.0, 1);
    for s in 1..=s_max.max(1) {
        if s > 1 {
            pk = &pk * &t.p;
            ak = &ak * &adj;
        }
        let m = &ak * &pk;
        let g = reversible_gap_matrix(&m, &pi)? / s as f64;
        if g > best.0 {
            best = (g, s);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsvarResult {
    pub gap: f64,
    /// `2/λ − 1`.
    pub from_gap: f64,
    /// Largest `σ²_φ / Var_π(φ)` over eigenfunctions, computed from the
    /// fundamental matrix.
    pub brute_force: f64,
}

/// Worst-case normalised asymptotic variance of a reversible matrix with
/// nonnegative spectrum. Pass `half_lazy = true` to apply `(I + P)/2` first.
pub fn worst_case_asvar(t: &TransitionMatrix, half_lazy: bool) -> Result<AsvarResult> {
    t.check()?;
    let t = if half_lazy { t.half_lazy() } else { t.clone() };
    let pi = t.stationary()?;
    if !t.is_reversible(&pi, 1e-12) {
        return Err(Error::InvalidData("worst-case asymptotic variance needs a reversible matrix".into()));
    }
    let eig = t.symmetrised(&pi).symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-12) {
        return Err(Error::InvalidData(
            "spectrum has negative eigenvalues; use the half-lazy kernel (I + P)/2".into(),
        ));
    }
    let gap = spectral_gap_reversible(&t, &pi)?;
    let n = t.size();
    let ones = DVector::from_element(n, 1.0);
    let fund = (DMatrix::identity(n, n) - &t.p + &ones * pi.transpose())
        .try_inverse()
        .ok_or_else(|| Error::Singular("fundamental matrix is singular".into()))?;
    // the Perron eigenvector is √π; skip the eigenvector closest to it
    let sqrt_pi = pi.map(|v| v.sqrt());
    let perron = (0..n)
        .max_by(|&a, &b| {
            let ca = eig.eigenvectors.column(a).dot(&sqrt_pi).abs();
            let cb = eig.eigenvectors.column(b).dot(&sqrt_pi).abs();
            ca.total_cmp(&cb)
        })
        .unwrap_or(0);
    let mut brute = 0.0f64;
    for k in 0..n {
        if k == perron {
            continue;
        }
        let u = eig.eigenvectors.column(k);
        let phi = DVector::from_fn(n, |i, _| if pi[i] > 0.0 { u[i] / pi[i].sqrt() } else { 0.0 });
        let mean = phi.dot(&pi);
        let centred = phi.map(|v| v - mean);
        let var: f64 = (0..n).map(|i| pi[i] * centred[i] * centred[i]).sum();
        if var < 1e-300 {
            continue;
        }
        let z = &fund * &centred;
        let cross: f64 = (0..n).map(|i| pi[i] * centred[i] * z[i]).sum();
        brute = brute.max((2.0 * cross - var) / var);
    }
    Ok(AsvarResult {
        gap,
        from_gap: 2.0 / gap - 1.0,
        brute_force: brute,
    })
}

/// Random reversible chain: symmetric positive weights normalised by row,
/// made half-lazy so the spectrum is nonnegative.
pub fn random_reversible(states: usize, stream: RngStream) -> TransitionMatrix {
    let mut rng = stream.rng();
    let mut w = DMatrix::zeros(states, states);
    for i in 0..states {
        for j in i..states {
            let v = uniform(&mut rng) + 0.01;
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    let mut p = w.clone();
    for i in 0..states {
        let s: f64 = w.row(i).iter().sum();
        for j in 0..states {
            p[(i, j)] = w[(i, j)] / s;
        }
    }
    let t = TransitionMatrix { p, grid: None };
    let mut lazy = t.half_lazy();
    for i in 0..states {
        let s: f64 = lazy.p.row(i).iter().sum();
        for j in 0..states {
            lazy.p[(i, j)] /= s;
        }
    }
    lazy
}
