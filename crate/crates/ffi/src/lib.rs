//! C ABI over the subsampling laboratory.
//!
//! Every fallible call returns a [`SublabStatus`]; on failure the message is
//! available from [`sublab_last_error`] on the same thread. Objects are opaque
//! handles that must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use sublab::cli::config::{parse_config, ExperimentKind, ModelSpec};
use sublab::cli::run_to_dir;
use sublab::diagnostics::{spectral_gap, TransitionMatrix};
use sublab::kernels::{build_kernel, run_chain, AnyKernel, Kernel, KernelConfig};
use sublab::models::{GlmModel, Target};
use sublab::{ChainTrace, Dataset, Error, RngStream};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SublabStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    Runtime = 4,
    Panic = 5,
}

/// A dataset of `n` rows with `d` covariates and one response each.
pub struct SublabDataset(Dataset);

/// A transition kernel bound to a model.
pub struct SublabKernel {
    kernel: AnyKernel,
}

/// A finished chain: states, acceptances and usage counts.
pub struct SublabChain(ChainTrace);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).unwrap_or_default());
}

fn fail(status: SublabStatus, msg: impl Into<String>) -> SublabStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> SublabStatus {
    let status = match e {
        Error::InvalidConfig(_) => SublabStatus::InvalidConfig,
        Error::IndexOutOfRange { .. } | Error::DimensionMismatch { .. } | Error::InvalidData(_) => SublabStatus::InvalidArgument,
        _ => SublabStatus::Runtime,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> SublabStatus) -> SublabStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == SublabStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(SublabStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SublabStatus> {
    if p.is_null() {
        return Err(fail(SublabStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SublabStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], SublabStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SublabStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sublab_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sublab_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from row-major `covariates` (`n·d` values) and
/// `responses` (`n` values).
///
/// # Safety
/// Pointers must reference arrays of the stated lengths; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sublab_dataset_new(
    covariates: *const f64,
    responses: *const f64,
    n: usize,
    d: usize,
    out: *mut *mut SublabDataset,
) -> SublabStatus {
    guard(|| {
        if out.is_null() {
            return fail(SublabStatus::NullPointer, "out is null");
        }
        let x = tri!(slice_arg(covariates, n * d, "covariates"));
        let y = tri!(slice_arg(responses, n, "responses"));
        match Dataset::new(x.to_vec(), y.to_vec(), d) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(SublabDataset(ds)));
                SublabStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `ds` must come from [`sublab_dataset_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sublab_dataset_free(ds: *mut SublabDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of rows, or 0 for a null handle.
///
/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sublab_dataset_len(ds: *const SublabDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

fn target_of(model: &ModelSpec) -> (Arc<dyn Target>, Option<GlmModel>) {
    match model {
        ModelSpec::Glm { glm, .. } => (Arc::new(*glm), Some(*glm)),
        ModelSpec::Toy { toy, .. } => (Arc::new(*toy), None),
    }
}

/// Builds a kernel from JSON. `model_json` is a model spec such as
/// `{"type":"toy","toy":"gaussian_hierarchy"}`; `kernel_json` is a kernel
/// config such as `{"kind":"generic","batch_size":10}`. `seed` drives any
/// construction-time randomness (the scan-order permutation).
///
/// # Safety
/// Strings must be NUL-terminated; `data` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sublab_kernel_new(
    model_json: *const c_char,
    kernel_json: *const c_char,
    data: *const SublabDataset,
    seed: u64,
    out: *mut *mut SublabKernel,
) -> SublabStatus {
    guard(|| {
        if out.is_null() || data.is_null() {
            return fail(SublabStatus::NullPointer, "out or data is null");
        }
        let m = tri!(str_arg(model_json, "model_json"));
        let k = tri!(str_arg(kernel_json, "kernel_json"));
        let model: ModelSpec = match serde_json::from_str(m) {
            Ok(v) => v,
            Err(e) => return fail(SublabStatus::InvalidConfig, format!("model: {e}")),
        };
        let cfg: KernelConfig = match serde_json::from_str(k) {
            Ok(v) => v,
            Err(e) => return fail(SublabStatus::InvalidConfig, format!("kernel: {e}")),
        };
        let data = &(*data).0;
        let (target, glm) = target_of(&model);
        if target.dim() != data.d() && glm.is_some() {
            return fail(SublabStatus::InvalidArgument, "model dimension does not match the dataset");
        }
        match build_kernel(&cfg, target, glm.as_ref(), data, RngStream::new(seed, 2)) {
            Ok(kernel) => {
                *out = Box::into_raw(Box::new(SublabKernel { kernel }));
                SublabStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `k` must come from [`sublab_kernel_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sublab_kernel_free(k: *mut SublabKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// Runs `steps` transitions from `init` (length `dim`).
///
/// # Safety
/// Handles must be live; `init` must hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn sublab_chain_run(
    kernel: *const SublabKernel,
    data: *const SublabDataset,
    init: *const f64,
    dim: usize,
    steps: usize,
    seed: u64,
    out: *mut *mut SublabChain,
) -> SublabStatus {
    guard(|| {
        if kernel.is_null() || data.is_null() || out.is_null() {
            return fail(SublabStatus::NullPointer, "kernel, data or out is null");
        }
        let theta = tri!(slice_arg(init, dim, "init"));
        let k = &(*kernel).kernel;
        let data = &(*data).0;
        if dim != k.target().dim() {
            return fail(
                SublabStatus::InvalidArgument,
                format!("init has length {dim}, expected {}", k.target().dim()),
            );
        }
        let state = match k.init_state(theta.to_vec(), data) {
            Ok(s) => s,
            Err(e) => return from_error(e),
        };
        match run_chain(k, data, state, steps, RngStream::new(seed, 3), false) {
            Ok((trace, _)) => {
                *out = Box::into_raw(Box::new(SublabChain(trace)));
                SublabStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `c` must come from [`sublab_chain_run`] or be null.
#[no_mangle]
pub unsafe extern "C" fn sublab_chain_free(c: *mut SublabChain) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Number of stored states (steps + 1), or 0 for a null handle.
///
/// # Safety
/// `c` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sublab_chain_len(c: *const SublabChain) -> usize {
    c.as_ref().map_or(0, |c| c.0.len())
}

/// Parameter dimension, or 0 for a null handle.
///
/// # Safety
/// `c` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn sublab_chain_dim(c: *const SublabChain) -> usize {
    c.as_ref().map_or(0, |c| c.0.dim())
}

/// Copies the states row-major into `buf`, which must hold `len · dim`
/// values.
///
/// # Safety
/// `buf` must be writable for `buf_len` values.
#[no_mangle]
pub unsafe extern "C" fn sublab_chain_states(c: *const SublabChain, buf: *mut f64, buf_len: usize) -> SublabStatus {
    guard(|| {
        let Some(c) = c.as_ref() else {
            return fail(SublabStatus::NullPointer, "chain is null");
        };
        let need = c.0.len() * c.0.dim();
        if buf_len < need {
            return fail(SublabStatus::InvalidArgument, format!("buffer holds {buf_len} values, need {need}"));
        }
        if need > 0 && buf.is_null() {
            return fail(SublabStatus::NullPointer, "buf is null");
        }
        for t in 0..c.0.len() {
            let s = c.0.state(t);
            std::ptr::copy_nonoverlapping(s.as_ptr(), buf.add(t * s.len()), s.len());
        }
        SublabStatus::Ok
    })
}

/// Usage summary of a chain.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SublabChainStats {
    pub acceptance: f64,
    /// Total likelihood-term evaluations.
    pub accesses: u64,
    /// Distinct datapoints ever evaluated.
    pub covered: usize,
}

/// # Safety
/// `c` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sublab_chain_stats(c: *const SublabChain, out: *mut SublabChainStats) -> SublabStatus {
    guard(|| {
        let (Some(c), false) = (c.as_ref(), out.is_null()) else {
            return fail(SublabStatus::NullPointer, "chain or out is null");
        };
        *out = SublabChainStats {
            acceptance: c.0.acceptance_rate(),
            accesses: c.0.ledger.access_count(),
            covered: c.0.ledger.covered(),
        };
        SublabStatus::Ok
    })
}

/// Spectral gap of a row-stochastic `k × k` matrix given row-major.
///
/// # Safety
/// `p` must hold `k²` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sublab_spectral_gap(p: *const f64, k: usize, out: *mut f64) -> SublabStatus {
    guard(|| {
        if out.is_null() {
            return fail(SublabStatus::NullPointer, "out is null");
        }
        let v = tri!(slice_arg(p, k * k, "p"));
        let m = nalgebra::DMatrix::from_row_slice(k, k, v);
        let result = TransitionMatrix::new(m).and_then(|t| spectral_gap(&t));
        match result {
            Ok(g) => {
                *out = g;
                SublabStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Runs a named experiment from JSON config text, writing artifacts into
/// `out_dir`. `failed` (optional) receives the failed replicate count.
///
/// # Safety
/// Strings must be NUL-terminated; `failed` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn sublab_run_experiment(
    experiment: *const c_char,
    config_json: *const c_char,
    seed: u64,
    out_dir: *const c_char,
    failed: *mut usize,
) -> SublabStatus {
    guard(|| {
        let name = tri!(str_arg(experiment, "experiment"));
        let text = tri!(str_arg(config_json, "config_json"));
        let dir = tri!(str_arg(out_dir, "out_dir"));
        let kind: ExperimentKind = match serde_json::from_value(serde_json::Value::String(name.into())) {
            Ok(k) => k,
            Err(_) => return fail(SublabStatus::InvalidArgument, format!("unknown experiment `{name}`")),
        };
        let loaded = match parse_config(kind, text) {
            Ok(l) => l,
            Err(e) => return from_error(e),
        };
        match run_to_dir(&loaded, seed, Path::new(dir)) {
            Ok((_, outcome)) => {
                if !failed.is_null() {
                    *failed = outcome.failed;
                }
                SublabStatus::Ok
            }
            Err((e, _)) => from_error(e),
        }
    })
}
