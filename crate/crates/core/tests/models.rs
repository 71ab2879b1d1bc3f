use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use sublab::diagnostics::{tv_distance, QuadratureSpec};
use sublab::models::{closed_form_tv, mle, sample_dataset, sample_toy_dataset, CovariateLaw, GlmFamily, GlmModel, Prior, ToyModel};
use sublab::{Dataset, RngStream};

fn logistic_data(n: usize, seed: u64) -> Dataset {
    let law = CovariateLaw::UniformBox {
        lo: vec![1.0, -1.0],
        hi: vec![1.0, 1.0],
    };
    sample_dataset(&GlmFamily::Logistic, &[0.4, -1.1], &law, n, RngStream::new(seed, 0)).unwrap()
}

/// Iteratively reweighted least squares for logistic regression, written
/// against the textbook normal equations.
fn irls(data: &Dataset) -> Vec<f64> {
    let d = data.d();
    let mut b = vec![0.0; d];
    for _ in 0..100 {
        let mut a = vec![vec![0.0; d]; d];
        let mut r = vec![0.0; d];
        for i in 0..data.n() {
            let x = data.row(i);
            let eta: f64 = x.iter().zip(&b).map(|(u, v)| u * v).sum();
            let p = 1.0 / (1.0 + (-eta).exp());
            let w = p * (1.0 - p);
            let z = eta + (data.response(i) - p) / w;
            for j in 0..d {
                r[j] += x[j] * w * z;
                for k in 0..d {
                    a[j][k] += x[j] * w * x[k];
                }
            }
        }
        // 2×2 solve by Cramer's rule
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        let next = vec![(r[0] * a[1][1] - a[0][1] * r[1]) / det, (a[0][0] * r[1] - a[1][0] * r[0]) / det];
        let done = next.iter().zip(&b).all(|(u, v)| (u - v).abs() < 1e-13);
        b = next;
        if done {
            break;
        }
    }
    b
}

#[test]
fn newton_mle_matches_irls() {
    for seed in 0..5 {
        let data = logistic_data(400, seed);
        let model = GlmModel::new(GlmFamily::Logistic, Prior::Flat, 2);
        let a = mle(&model, &data).unwrap();
        let b = irls(&data);
        for (u, v) in a.iter().zip(&b) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-8);
        }
    }
}

#[test]
fn score_and_hessian_match_finite_differences() {
    let families = [
        GlmFamily::Logistic,
        GlmFamily::Poisson,
        GlmFamily::Binomial { trials: 5 },
        GlmFamily::GaussianIdentity,
    ];
    for (f, fam) in families.iter().enumerate() {
        let law = CovariateLaw::default_box(2);
        let data = sample_dataset(fam, &[0.3, -0.5], &law, 60, RngStream::new(f as u64, 1)).unwrap();
        let model = GlmModel::new(*fam, Prior::Gaussian { tau2: 2.0 }, 2);
        let beta = [0.2, -0.4];
        let h = 1e-5;
        let g = model.grad_log_posterior(&data, &beta).unwrap();
        let hess = model.hessian_log_posterior(&data, &beta).unwrap();
        for j in 0..2 {
            let mut up = beta;
            let mut dn = beta;
            up[j] += h;
            dn[j] -= h;
            let fd = (model.log_posterior(&data, &up).unwrap() - model.log_posterior(&data, &dn).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(g[j], fd, epsilon = 1e-5 * (1.0 + fd.abs()));
            let gu = model.grad_log_posterior(&data, &up).unwrap();
            let gd = model.grad_log_posterior(&data, &dn).unwrap();
            for k in 0..2 {
                let fd2 = (gu[k] - gd[k]) / (2.0 * h);
                assert_abs_diff_eq!(hess[(k, j)], fd2, epsilon = 1e-5 * (1.0 + fd2.abs()));
            }
        }
    }
}

#[test]
fn gaussian_tv_closed_form_matches_quadrature() {
    for (i, n) in [20usize, 500, 5000].into_iter().enumerate() {
        let data = sample_toy_dataset(ToyModel::GaussianHierarchy, n, None, RngStream::new(3, i as u64));
        let m = (n as f64).sqrt().ceil() as usize;
        let p = ToyModel::GaussianHierarchy.posterior(&data);
        let q = ToyModel::GaussianHierarchy.posterior(&data.prefix(m));
        let (a, b) = p.support_hint();
        let (c, d) = q.support_hint();
        let spec = QuadratureSpec::new(vec![(a.min(c), b.max(d))]).with_tol(1e-9);
        let quad = tv_distance(|t| p.log_pdf(t[0]), |t| q.log_pdf(t[0]), &spec).unwrap();
        assert_abs_diff_eq!(closed_form_tv(&p, &q), quad, epsilon = 1e-6);
    }
}

#[test]
fn exponential_tail_posterior_is_normalised() {
    let data = sample_toy_dataset(ToyModel::ExponentialTail, 300, Some(2.0), RngStream::new(8, 0));
    let p = ToyModel::ExponentialTail.posterior(&data);
    let (a, b) = p.support_hint();
    let spec = QuadratureSpec::new(vec![(a, b)]).with_tol(1e-10);
    let z = sublab::diagnostics::log_normaliser(|t| p.log_pdf(t[0]), &spec).unwrap();
    assert_abs_diff_eq!(z, 0.0, epsilon = 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tv_is_a_metric_on_gaussian_posteriors(seed in 0u64..1000, n in 2usize..400) {
        let data = sample_toy_dataset(ToyModel::GaussianHierarchy, n, None, RngStream::new(seed, 0));
        let m = 1 + (seed as usize) % n;
        let p = ToyModel::GaussianHierarchy.posterior(&data);
        let q = ToyModel::GaussianHierarchy.posterior(&data.prefix(m));
        let tv = closed_form_tv(&p, &q);
        prop_assert!((0.0..=1.0).contains(&tv));
        prop_assert!((tv - closed_form_tv(&q, &p)).abs() < 1e-12);
        prop_assert!(closed_form_tv(&p, &p) < 1e-12);
    }

    #[test]
    fn score_vanishes_at_the_mle(seed in 0u64..200) {
        let data = logistic_data(300, seed);
        let model = GlmModel::new(GlmFamily::Logistic, Prior::Flat, 2);
        if let Ok(b) = mle(&model, &data) {
            let g = model.score(&data, &b);
            prop_assert!(g.iter().all(|v| v.abs() < 1e-7));
        }
    }
}
