use std::sync::Arc;

use proptest::prelude::*;
use sublab::kernels::{build_kernel, run_chain, usage_soundness, Kernel, KernelConfig, KernelKind, Stopping, WeightRule};
use sublab::models::{mle, sample_dataset, sample_toy_dataset, CovariateLaw, GlmModel, Target, ToyModel};
use sublab::{Dataset, RngStream};

fn logistic() -> (GlmModel, Dataset) {
    let model = GlmModel::logistic(1, 4.0);
    let data = sample_dataset(&model.family, &[1.0], &CovariateLaw::default_box(1), 150, RngStream::new(2, 0)).unwrap();
    (model, data)
}

fn configs() -> Vec<KernelConfig> {
    let mut out = Vec::new();
    out.push(KernelConfig::new(KernelKind::FullMh));
    let mut g = KernelConfig::new(KernelKind::Generic);
    g.batch_size = 7;
    out.push(g.clone());
    g.stopping = Stopping::Geometric { continue_prob: 0.5 };
    out.push(g.clone());
    g.stopping = Stopping::Austerity { delta: 0.05 };
    out.push(g);
    let mut inf = KernelConfig::new(KernelKind::Informed);
    inf.batch_size = 5;
    inf.weight_bound = 2.0;
    inf.weights = WeightRule::ResponseTilt;
    out.push(inf);
    let mut ff = KernelConfig::new(KernelKind::Firefly);
    ff.resample_fraction = 0.1;
    out.push(ff);
    let mut p = KernelConfig::new(KernelKind::Generic);
    p.batch_size = 4;
    p.permute = true;
    out.push(p);
    out
}

#[test]
fn unused_data_never_changes_a_step() {
    let (model, data) = logistic();
    let center = mle(&model, &data).unwrap();
    for (c, cfg) in configs().iter().enumerate() {
        let target: Arc<dyn Target> = Arc::new(model);
        let k = build_kernel(cfg, target, Some(&model), &data, RngStream::new(1, c as u64)).unwrap();
        let init = k.init_state(center.clone(), &data).unwrap();
        let probes = usage_soundness(&k, &data, init, 60, RngStream::new(5, c as u64), &|y| 1.0 - y).unwrap();
        assert!(probes.iter().all(|p| p.identical), "{} leaked", k.name());
        if !matches!(cfg.kind, KernelKind::FullMh) {
            assert!(probes.iter().any(|p| p.perturbed.is_some()), "{} never left data unused", k.name());
        }
    }
}

#[test]
fn chains_are_reproducible_per_stream() {
    let data = sample_toy_dataset(ToyModel::GaussianHierarchy, 200, Some(0.3), RngStream::new(1, 0));
    let target: Arc<dyn Target> = Arc::new(ToyModel::GaussianHierarchy);
    let mut cfg = KernelConfig::new(KernelKind::Generic);
    cfg.batch_size = 10;
    let k = build_kernel(&cfg, target, None, &data, RngStream::new(1, 1)).unwrap();
    let run = |s| {
        let init = k.init_state(vec![0.3], &data).unwrap();
        run_chain(&k, &data, init, 500, RngStream::new(s, 3), true).unwrap().0
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn full_mh_uses_every_datum_every_step() {
    let data = sample_toy_dataset(ToyModel::GaussianHierarchy, 50, Some(0.0), RngStream::new(1, 0));
    let target: Arc<dyn Target> = Arc::new(ToyModel::GaussianHierarchy);
    let k = build_kernel(&KernelConfig::new(KernelKind::FullMh), target, None, &data, RngStream::new(0, 0)).unwrap();
    let init = k.init_state(vec![0.0], &data).unwrap();
    let (trace, _) = run_chain(&k, &data, init, 20, RngStream::new(0, 1), true).unwrap();
    assert!(trace.ledger.step_sizes().iter().all(|&s| s == 50));
    assert_eq!(trace.ledger.first_cover_step(50), Some(1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn used_sets_are_sorted_distinct_and_in_range(seed in 0u64..10_000, k in 1usize..30) {
        let data = sample_toy_dataset(ToyModel::GaussianHierarchy, 60, None, RngStream::new(seed, 0));
        let target: Arc<dyn Target> = Arc::new(ToyModel::GaussianHierarchy);
        let mut cfg = KernelConfig::new(KernelKind::Generic);
        cfg.batch_size = k;
        cfg.stopping = Stopping::Geometric { continue_prob: 0.3 };
        let kern = build_kernel(&cfg, target, None, &data, RngStream::new(seed, 1)).unwrap();
        let mut state = kern.init_state(vec![0.0], &data).unwrap();
        let mut rng = RngStream::new(seed, 2).rng();
        for _ in 0..20 {
            let tr = kern.step(&state, &data, &mut rng).unwrap();
            prop_assert!(tr.used.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(tr.used.iter().all(|&i| i < 60));
            prop_assert!(tr.used.len() >= k.min(60));
            state = tr.state;
        }
    }
}
