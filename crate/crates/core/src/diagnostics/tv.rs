//! Total variation by tensor-product Simpson quadrature in one or two
//! dimensions, with grid doubling until successive estimates agree.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Integration box, one `(lo, hi)` per dimension (1 or 2 entries).
    pub bounds: Vec<(f64, f64)>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Intervals per dimension at the first level (rounded up to even).
    #[serde(default = "default_initial")]
    pub initial: usize,
    /// Largest intervals-per-dimension before giving up.
    #[serde(default = "default_max")]
    pub max_intervals: usize,
}

fn default_tol() -> f64 {
    1e-6
}
fn default_initial() -> usize {
    256
}
fn default_max() -> usize {
    1 << 20
}

impl QuadratureSpec {
    pub fn new(bounds: Vec<(f64, f64)>) -> Self {
        let max_intervals = if bounds.len() >= 2 { 1 << 11 } else { default_max() };
        Self {
            bounds,
            tol: default_tol(),
            initial: default_initial(),
            max_intervals,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() || self.bounds.len() > 2 {
            return Err(Error::Unsupported(format!(
                "quadrature supports 1 or 2 dimensions, got {}",
                self.bounds.len()
            )));
        }
        if self.bounds.iter().any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
            return Err(Error::InvalidConfig("quadrature bounds need finite lo < hi".into()));
        }
        Ok(())
    }
}

/// Simpson nodes and weights on `[a, b]` with `n` (even) intervals.
fn simpson_1d(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (b - a) / n as f64;
    let nodes = (0..=n).map(|k| if k == n { b } else { a + k as f64 * h }).collect();
    let weights = (0..=n)
        .map(|k| {
            let c = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (nodes, weights)
}

/// Tensor grid: flat list of points and weights.
fn grid(spec: &QuadratureSpec, n: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let axes: Vec<_> = spec.bounds.iter().map(|&(a, b)| simpson_1d(a, b, n)).collect();
    if axes.len() == 1 {
        let (x, w) = &axes[0];
        (x.iter().map(|&v| vec![v]).collect(), w.clone())
    } else {
        let (x0, w0) = &axes[0];
        let (x1, w1) = &axes[1];
        let mut pts = Vec::with_capacity(x0.len() * x1.len());
        let mut ws = Vec::with_capacity(x0.len() * x1.len());
        for (a, wa) in x0.iter().zip(w0) {
            for (b, wb) in x1.iter().zip(w1) {
                pts.push(vec![*a, *b]);
                ws.push(wa * wb);
            }
        }
        (pts, ws)
    }
}

fn eval_log<F: Fn(&[f64]) -> f64 + Sync>(f: &F, pts: &[Vec<f64>]) -> Vec<f64> {
    pts.par_iter().map(|p| f(p)).collect()
}

fn max_finite(v: &[f64]) -> f64 {
    v.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max)
}

/// Normalisation of one log density on one grid: returns the shift and the
/// integral of `exp(lp − shift)`.
fn normaliser(lp: &[f64], w: &[f64]) -> (f64, f64) {
    let shift = max_finite(lp);
    let z = lp.iter().zip(w).map(|(l, w)| w * (l - shift).exp()).sum();
    (shift, z)
}

fn tv_on_grid<F, G>(f: &F, g: &G, spec: &QuadratureSpec, n: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let (pts, w) = grid(spec, n);
    let lf = eval_log(f, &pts);
    let lg = eval_log(g, &pts);
    let (sf, zf) = normaliser(&lf, &w);
    let (sg, zg) = normaliser(&lg, &w);
    if !(zf > 0.0 && zg > 0.0 && zf.is_finite() && zg.is_finite()) {
        return Err(Error::InvalidData("density has no finite mass on the quadrature box".into()));
    }
    let s: f64 = lf
        .iter()
        .zip(&lg)
        .zip(&w)
        .map(|((a, b), w)| w * ((a - sf).exp() / zf - (b - sg).exp() / zg).abs())
        .sum();
    Ok(0.5 * s)
}

/// One-dimensional TV that splits the box at the crossings of the two
/// normalised densities, so each piece integrates a smooth function.
fn tv_on_grid_1d<F, G>(f: &F, g: &G, spec: &QuadratureSpec, n: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    let (a, b) = spec.bounds[0];
    let (x, w) = simpson_1d(a, b, n);
    let pts: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
    let lf = eval_log(f, &pts);
    let lg = eval_log(g, &pts);
    let (sf, zf) = normaliser(&lf, &w);
    let (sg, zg) = normaliser(&lg, &w);
    if !(zf > 0.0 && zg > 0.0 && zf.is_finite() && zg.is_finite()) {
        return Err(Error::InvalidData("density has no finite mass on the quadrature box".into()));
    }
    let diff = |t: f64| (f(&[t]) - sf).exp() / zf - (g(&[t]) - sg).exp() / zg;
    let dv: Vec<f64> = lf
        .iter()
        .zip(&lg)
        .map(|(p, q)| (p - sf).exp() / zf - (q - sg).exp() / zg)
        .collect();
    let mut cuts = vec![a];
    for k in 0..n {
        if dv[k] != 0.0 && dv[k + 1] != 0.0 && (dv[k] > 0.0) != (dv[k + 1] > 0.0) {
            let (mut lo, mut hi) = (x[k], x[k + 1]);
            let lo_pos = dv[k] > 0.0;
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if (diff(mid) > 0.0) == lo_pos {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            cuts.push(0.5 * (lo + hi));
        }
    }
    cuts.push(b);
    let h = (b - a) / n as f64;
    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let m = (((seg[1] - seg[0]) / h).ceil() as usize).max(2);
        let m = m + m % 2;
        let (sx, sw) = simpson_1d(seg[0], seg[1], m);
        let part: f64 = sx.iter().zip(&sw).map(|(t, w)| w * diff(*t)).sum();
        total += part.abs();
    }
    Ok(0.5 * total)
}

fn refine<E: FnMut(usize) -> Result<f64>>(spec: &QuadratureSpec, mut est: E) -> Result<f64> {
    spec.validate()?;
    let mut n = spec.initial.max(4);
    n += n % 2;
    let mut before = f64::NAN;
    let mut prev = est(n)?;
    loop {
        let next_n = n * 2;
        if next_n > spec.max_intervals {
            return Err(Error::QuadratureNonConvergence {
                previous: before,
                last: prev,
            });
        }
        let cur = est(next_n)?;
        if (cur - prev).abs() < spec.tol {
            return Ok(cur);
        }
        before = prev;
        prev = cur;
        n = next_n;
    }
}

/// `½∫|p₁ − p₂|` for two densities known up to constants through their
/// logarithms. Each is normalised independently on the same grid.
pub fn tv_distance<F, G>(log_p1: F, log_p2: G, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    if spec.bounds.len() == 1 {
        return refine(spec, |n| tv_on_grid_1d(&log_p1, &log_p2, spec, n));
    }
    refine(spec, |n| tv_on_grid(&log_p1, &log_p2, spec, n))
}

/// `log ∫ exp(log_p)` over the box, refined until the relative change of the
/// integral is below `spec.tol`.
pub fn log_normaliser<F>(log_p: F, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    // refine on the integral scaled by a fixed shift so relative tolerance
    // applies to the mass itself
    spec.validate()?;
    let (pts, _) = grid(spec, spec.initial.max(4) + spec.initial % 2);
    let shift = max_finite(&eval_log(&log_p, &pts));
    let scaled = refine(spec, |n| {
        let (pts, w) = grid(spec, n);
        let lp = eval_log(&log_p, &pts);
        Ok(lp.iter().zip(&w).map(|(l, w)| w * (l - shift).exp()).sum::<f64>())
    })?;
    Ok(shift + scaled.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn ln_normal(m: f64, s: f64) -> impl Fn(&[f64]) -> f64 + Sync {
        move |x: &[f64]| -0.5 * ((x[0] - m) / s).powi(2)
    }

    #[test]
    fn identical_densities() {
        let spec = QuadratureSpec::new(vec![(-10.0, 10.0)]);
        let tv = tv_distance(ln_normal(0.0, 1.0), ln_normal(0.0, 1.0), &spec).unwrap();
        assert!(tv < 1e-10);
    }

    #[test]
    fn unit_shift_normals() {
        let spec = QuadratureSpec::new(vec![(-12.0, 13.0)]);
        let tv = tv_distance(ln_normal(0.0, 1.0), ln_normal(1.0, 1.0), &spec).unwrap();
        let oracle = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(0.5) - 1.0;
        assert!((tv - oracle).abs() < 1e-6, "{tv} vs {oracle}");
        assert!((tv - 0.38292).abs() < 1e-5);
    }

    #[test]
    fn exponentials_against_crossing_point() {
        let spec = QuadratureSpec::new(vec![(0.0, 4.0)]);
        let tv = tv_distance(|x: &[f64]| -10.0 * x[0], |x: &[f64]| -12.0 * x[0], &spec).unwrap();
        let c = (12.0f64 / 10.0).ln() / 2.0;
        let oracle = (-10.0 * c).exp() - (-12.0 * c).exp();
        assert!((tv - oracle).abs() < 1e-6, "{tv} vs {oracle}");
    }

    #[test]
    fn two_dimensional_product() {
        let spec = QuadratureSpec::new(vec![(-9.0, 10.0), (-9.0, 9.0)]).with_tol(1e-5);
        let tv = tv_distance(
            |x: &[f64]| -0.5 * (x[0] * x[0] + x[1] * x[1]),
            |x: &[f64]| -0.5 * ((x[0] - 1.0).powi(2) + x[1] * x[1]),
            &spec,
        )
        .unwrap();
        let oracle = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(0.5) - 1.0;
        assert!((tv - oracle).abs() < 1e-5);
    }

    #[test]
    fn normaliser_of_gaussian() {
        let spec = QuadratureSpec::new(vec![(-10.0, 10.0)]).with_tol(1e-12);
        let lz = log_normaliser(ln_normal(0.0, 1.0), &spec).unwrap();
        assert!((lz - (2.0 * std::f64::consts::PI).sqrt().ln()).abs() < 1e-10);
    }

    #[test]
    fn nonconvergence_reports_estimates() {
        let mut spec = QuadratureSpec::new(vec![(-1.0, 1.0)]);
        spec.initial = 4;
        spec.max_intervals = 8;
        spec.tol = 1e-300;
        let err = tv_distance(ln_normal(0.0, 0.01), ln_normal(0.1, 0.01), &spec).unwrap_err();
        assert!(matches!(err, Error::QuadratureNonConvergence { .. }));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]
        #[test]
        fn symmetric_and_triangle(m1 in -1.0..1.0f64, m2 in -1.0..1.0f64, m3 in -1.0..1.0f64,
                                  s1 in 0.5..1.5f64, s2 in 0.5..1.5f64, s3 in 0.5..1.5f64) {
            let spec = QuadratureSpec::new(vec![(-12.0, 12.0)]);
            let d12 = tv_distance(ln_normal(m1, s1), ln_normal(m2, s2), &spec).unwrap();
            let d21 = tv_distance(ln_normal(m2, s2), ln_normal(m1, s1), &spec).unwrap();
            let d13 = tv_distance(ln_normal(m1, s1), ln_normal(m3, s3), &spec).unwrap();
            let d23 = tv_distance(ln_normal(m2, s2), ln_normal(m3, s3), &spec).unwrap();
            proptest::prop_assert!((d12 - d21).abs() < 1e-9);
            proptest::prop_assert!(d13 <= d12 + d23 + 3e-6);
        }
    }
}
