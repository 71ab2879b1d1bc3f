use sublab::cvars::{ControlVariateSet, CvKind};
use sublab::manifold::{couple_datasets, manifold_mh_step, ManifoldConstraint, RESIDUAL_TOL};
use sublab::models::{mle, sample_dataset, CovariateLaw, GlmFamily, GlmModel};
use sublab::{Dataset, RngStream};

/// Conditional density of the first free coordinate of a uniform point of
/// `[−1,1]³` given the free sum `sigma`: the length of the segment
/// `{x₂ + x₃ = sigma − x₁}` inside `[−1,1]²`.
fn slice_density(x: f64, sigma: f64) -> f64 {
    (2.0 - (sigma - x).abs()).max(0.0)
}

fn slice_cdf(sigma: f64) -> impl Fn(f64) -> f64 {
    let grid = 200_000;
    let h = 2.0 / grid as f64;
    let mut cum = vec![0.0; grid + 1];
    for i in 0..grid {
        let a = -1.0 + i as f64 * h;
        cum[i + 1] = cum[i] + 0.5 * h * (slice_density(a, sigma) + slice_density(a + h, sigma));
    }
    let total = cum[grid];
    move |x: f64| {
        if x <= -1.0 {
            return 0.0;
        }
        if x >= 1.0 {
            return 1.0;
        }
        let t = (x + 1.0) / h;
        let i = (t as usize).min(grid - 1);
        let f = t - i as f64;
        (cum[i] + f * (cum[i + 1] - cum[i])) / total
    }
}

#[test]
fn affine_walk_has_the_conditioned_uniform_marginal() {
    let base = Dataset::observations(vec![0.3, 0.5, -0.2, 0.6]);
    let sigma = 0.5 - 0.2 + 0.6;
    let law = CovariateLaw::default_box(1);
    let cv = ControlVariateSet::build(&CvKind::Mean, None, &base).unwrap();
    let mc0 = ManifoldConstraint::new(base, 1, cv, law).unwrap().with_trust_radius(1.0);
    let chains = 2000;
    let mut draws = Vec::with_capacity(chains);
    for c in 0..chains {
        let mut mc = mc0.clone();
        let mut rng = RngStream::new(17, c as u64).rng();
        for _ in 0..400 {
            manifold_mh_step(&mut mc, 1.0, &mut rng).unwrap();
        }
        assert!(mc.residual(&mc.base) < 1e-10);
        assert_eq!(mc.base.row(0)[0], 0.3);
        draws.push(mc.base.row(1)[0]);
    }
    draws.sort_by(f64::total_cmp);
    let cdf = slice_cdf(sigma);
    let n = draws.len() as f64;
    let ks = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value of the one-sample KS statistic
    let crit = 1.628 / n.sqrt();
    assert!(ks < crit, "KS {ks} >= {crit}");
}

#[test]
fn coupled_logistic_dataset_keeps_prefix_responses_and_mle() {
    let model = GlmModel::logistic(1, 1.0);
    let law = CovariateLaw::default_box(1);
    let z1 = sample_dataset(&GlmFamily::Logistic, &[0.7], &law, 50, RngStream::new(4, 0)).unwrap();
    let c = couple_datasets(&z1, Some(&model), &CvKind::Mle, 5, &law, 100, None, RngStream::new(4, 1)).unwrap();
    assert!(c.residual < RESIDUAL_TOL);
    assert_eq!(z1.responses(), c.z2.responses());
    assert_eq!(&z1.covariates()[..5], &c.z2.covariates()[..5]);
    assert!(z1.covariates()[5..].iter().zip(&c.z2.covariates()[5..]).any(|(a, b)| a != b));
    let b1 = mle(&model, &z1).unwrap();
    let b2 = mle(&model, &c.z2).unwrap();
    assert!((b1[0] - b2[0]).abs() < 1e-6);
    assert!(c.z2.covariates().iter().all(|x| (-1.0..=1.0).contains(x)));
}

#[test]
fn zero_walk_returns_the_input() {
    let model = GlmModel::logistic(1, 1.0);
    let law = CovariateLaw::default_box(1);
    let z1 = sample_dataset(&GlmFamily::Logistic, &[0.7], &law, 30, RngStream::new(5, 0)).unwrap();
    let c = couple_datasets(&z1, Some(&model), &CvKind::Mle, 3, &law, 0, None, RngStream::new(5, 1)).unwrap();
    assert_eq!(c.z2, z1);
}
