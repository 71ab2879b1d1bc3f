use std::ffi::{CStr, CString};
use std::ptr;

use sublab_ffi::*;

fn last() -> String {
    unsafe { CStr::from_ptr(sublab_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn dataset_kernel_chain_roundtrip() {
    let n = 200;
    let x = vec![0.0; n];
    let y: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(sublab_dataset_new(x.as_ptr(), y.as_ptr(), n, 1, &mut ds), SublabStatus::Ok);
        assert_eq!(sublab_dataset_len(ds), n);

        let model = CString::new(r#"{"type":"toy","toy":"gaussian_hierarchy"}"#).unwrap();
        let kcfg = CString::new(r#"{"kind":"generic","batch_size":5}"#).unwrap();
        let mut k = ptr::null_mut();
        assert_eq!(sublab_kernel_new(model.as_ptr(), kcfg.as_ptr(), ds, 1, &mut k), SublabStatus::Ok, "{}", last());

        let init = [0.0];
        let mut ch = ptr::null_mut();
        assert_eq!(sublab_chain_run(k, ds, init.as_ptr(), 1, 100, 9, &mut ch), SublabStatus::Ok, "{}", last());
        assert_eq!(sublab_chain_len(ch), 101);
        assert_eq!(sublab_chain_dim(ch), 1);

        let mut buf = vec![f64::NAN; 101];
        assert_eq!(sublab_chain_states(ch, buf.as_mut_ptr(), buf.len()), SublabStatus::Ok);
        assert_eq!(buf[0], 0.0);
        assert!(buf.iter().all(|v| v.is_finite()));
        assert_eq!(sublab_chain_states(ch, buf.as_mut_ptr(), 10), SublabStatus::InvalidArgument);

        let mut st = SublabChainStats::default();
        assert_eq!(sublab_chain_stats(ch, &mut st), SublabStatus::Ok);
        assert!(st.accesses >= 100 * 5);
        assert!(st.covered <= n);
        assert!((0.0..=1.0).contains(&st.acceptance));

        sublab_chain_free(ch);
        sublab_kernel_free(k);
        sublab_dataset_free(ds);
    }
}

#[test]
fn same_seed_same_chain() {
    let y: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
    let x = vec![0.0; 50];
    let run = |seed| unsafe {
        let mut ds = ptr::null_mut();
        sublab_dataset_new(x.as_ptr(), y.as_ptr(), 50, 1, &mut ds);
        let model = CString::new(r#"{"type":"toy","toy":"gaussian_hierarchy"}"#).unwrap();
        let kcfg = CString::new(r#"{"kind":"full_mh"}"#).unwrap();
        let mut k = ptr::null_mut();
        sublab_kernel_new(model.as_ptr(), kcfg.as_ptr(), ds, 0, &mut k);
        let mut ch = ptr::null_mut();
        sublab_chain_run(k, ds, [0.5].as_ptr(), 1, 50, seed, &mut ch);
        let mut buf = vec![0.0; 51];
        sublab_chain_states(ch, buf.as_mut_ptr(), 51);
        sublab_chain_free(ch);
        sublab_kernel_free(k);
        sublab_dataset_free(ds);
        buf
    };
    assert_eq!(run(4), run(4));
    assert_ne!(run(4), run(5));
}

#[test]
fn bad_kernel_config_names_the_field() {
    let x = [0.0];
    let y = [1.0];
    unsafe {
        let mut ds = ptr::null_mut();
        sublab_dataset_new(x.as_ptr(), y.as_ptr(), 1, 1, &mut ds);
        let model = CString::new(r#"{"type":"toy","toy":"gaussian_hierarchy"}"#).unwrap();
        let kcfg = CString::new(r#"{"kind":"generic","batch_sise":5}"#).unwrap();
        let mut k = ptr::null_mut();
        assert_eq!(sublab_kernel_new(model.as_ptr(), kcfg.as_ptr(), ds, 1, &mut k), SublabStatus::InvalidConfig);
        assert!(last().contains("batch_sise"), "{}", last());
        assert!(k.is_null());
        sublab_dataset_free(ds);
    }
}

#[test]
fn runs_an_experiment_into_a_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = CString::new(dir.path().to_str().unwrap()).unwrap();
    let name = CString::new("toy").unwrap();
    let cfg = CString::new(r#"{"toy":"gaussian_hierarchy","n_grid":[100],"m":"sqrt","replicates":3}"#).unwrap();
    let mut failed = usize::MAX;
    let s = unsafe { sublab_run_experiment(name.as_ptr(), cfg.as_ptr(), 1, out.as_ptr(), &mut failed) };
    assert_eq!(s, SublabStatus::Ok, "{}", last());
    assert_eq!(failed, 0);
    let csv = std::fs::read_to_string(dir.path().join("toy_tv.csv")).unwrap();
    assert!(csv.starts_with("# manifest: "));
    assert_eq!(csv.lines().count(), 2 + 3);
    assert!(dir.path().join("manifest.json").exists());

    let bogus = CString::new("nope").unwrap();
    let s = unsafe { sublab_run_experiment(bogus.as_ptr(), cfg.as_ptr(), 1, out.as_ptr(), ptr::null_mut()) };
    assert_eq!(s, SublabStatus::InvalidArgument);
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sublab.h")).unwrap();
    for f in [
        "sublab_last_error",
        "sublab_version",
        "sublab_dataset_new",
        "sublab_dataset_free",
        "sublab_dataset_len",
        "sublab_kernel_new",
        "sublab_kernel_free",
        "sublab_chain_run",
        "sublab_chain_free",
        "sublab_chain_len",
        "sublab_chain_dim",
        "sublab_chain_states",
        "sublab_chain_stats",
        "sublab_spectral_gap",
        "sublab_run_experiment",
    ] {
        assert!(h.contains(&format!("{f}(")), "missing {f}");
    }
    assert!(h.contains("typedef struct SublabKernel SublabKernel;"));
    assert!(h.contains("SUBLAB_STATUS_OK = 0"));
}
