use proptest::prelude::*;
use sublab::diagnostics::{
    anticoncentration_check, coupon_sim, iat_ess, pseudo_spectral_gap, random_reversible, spectral_gap, worst_case_asvar,
    TransitionMatrix,
};
use sublab::RngStream;

fn binom(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Irwin–Hall CDF of a sum of `m` standard uniforms.
fn irwin_hall_cdf(m: u64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= m as f64 {
        return 1.0;
    }
    let fact: f64 = (1..=m).map(|i| i as f64).product();
    (0..=x.floor() as u64)
        .map(|k| (if k % 2 == 0 { 1.0 } else { -1.0 }) * binom(m, k) * (x - k as f64).powi(m as i32))
        .sum::<f64>()
        / fact
}

#[test]
fn window_mass_matches_irwin_hall_at_m4() {
    let a = anticoncentration_check(&[0.5; 4], 0.0, 1.0, 0.1, 4_000_000, RngStream::new(2, 0)).unwrap();
    // S = ΣU/2, so a window of width 0.1 in S is width 0.2 in ΣU; the
    // densest one is centred on the mode 2.
    let oracle = irwin_hall_cdf(4, 2.1) - irwin_hall_cdf(4, 1.9);
    assert!((a.max_mass - oracle).abs() < 1e-3, "{} vs {oracle}", a.max_mass);
    assert!(a.ok);
}

#[test]
fn coupon_mean_matches_harmonic_number() {
    let n = 100;
    let draws = coupon_sim(&vec![1.0; n], 1, 1.0, 4000, RngStream::new(3, 0)).unwrap();
    let mean = draws.iter().sum::<u64>() as f64 / draws.len() as f64;
    let h: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    assert!((mean / (n as f64 * h) - 1.0).abs() < 0.03);
}

#[test]
fn ar1_iat_matches_closed_form() {
    let rho: f64 = 0.8;
    let mut rng = RngStream::new(6, 0).rng();
    let mut x = 0.0;
    let v: Vec<f64> = (0..400_000)
        .map(|_| {
            x = rho * x + (1.0 - rho * rho).sqrt() * sublab::rng::standard_normal(&mut rng);
            x
        })
        .collect();
    let est = iat_ess(&v).unwrap();
    let exact = (1.0 + rho) / (1.0 - rho);
    assert!((est.iat / exact - 1.0).abs() < 0.1, "{}", est.iat);
    assert!(est.reliable);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn asvar_identity_holds_on_random_chains(seed in 0u64..100_000, k in 3usize..15) {
        let t = random_reversible(k, RngStream::new(seed, 0));
        let r = worst_case_asvar(&t, false).unwrap();
        prop_assert!((r.brute_force - r.from_gap).abs() <= 1e-8 * r.from_gap.max(1.0));
    }

    #[test]
    fn pseudo_gap_dominates_gap_on_reversible_chains(seed in 0u64..100_000, k in 3usize..10) {
        let t = random_reversible(k, RngStream::new(seed, 1));
        let g = spectral_gap(&t).unwrap();
        let (p, _) = pseudo_spectral_gap(&t, 20).unwrap();
        prop_assert!(p + 1e-10 >= g);
    }

    #[test]
    fn gap_lies_in_unit_interval(seed in 0u64..100_000, k in 2usize..12) {
        let t = random_reversible(k, RngStream::new(seed, 2));
        let g = spectral_gap(&t).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&g));
        let lazy: TransitionMatrix = t.half_lazy();
        prop_assert!((spectral_gap(&lazy).unwrap() - 0.5 * g).abs() < 1e-8);
    }
}
