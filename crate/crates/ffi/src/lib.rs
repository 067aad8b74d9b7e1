//! C ABI over the experiment harness.
//!
//! Every function returns an [`NccStatus`]. On failure a message is stored
//! per thread and can be read with [`ncc_last_error`]. Handles are opaque and
//! must be released with their `_free` function; passing NULL to a `_free`
//! function is a no-op.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use ncc::harness::{self, ConfigError, LoadedConfig, RunReport};

/// Result code of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NccStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Checkpoint = 5,
    NumericFailure = 6,
    Incompatible = 7,
    ChecksFailed = 8,
    Internal = 9,
}

/// A validated experiment config.
pub struct NccExperiment {
    loaded: LoadedConfig,
}

/// Outcome of [`ncc_experiment_run`].
pub struct NccReport {
    report: RunReport,
}

/// Per-seed summary. Rewards are NaN when unavailable.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NccSeedResult {
    pub seed: u64,
    pub failed: bool,
    pub episodes_completed: usize,
    /// Mean training reward over the last 100 episodes.
    pub final_mean_reward: f64,
    /// Greedy evaluation after training.
    pub eval_mean: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &ncc::Error) -> NccStatus {
    use ncc::Error as E;
    match e {
        E::Config(ConfigError::Io { .. }) | E::Io(_) => NccStatus::Io,
        E::Config(_) => NccStatus::Config,
        E::Checkpoint(_) => NccStatus::Checkpoint,
        E::NumericFailure { .. } => NccStatus::NumericFailure,
        E::Incompatible(_) | E::Dimension { .. } => NccStatus::Incompatible,
        _ => NccStatus::Internal,
    }
}

struct Fail(NccStatus);

impl From<ncc::Error> for Fail {
    fn from(e: ncc::Error) -> Self {
        let s = status_of(&e);
        set_error(e.to_string());
        Fail(s)
    }
}

fn fail(status: NccStatus, msg: &str) -> Fail {
    set_error(msg);
    Fail(status)
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NccStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NccStatus::Ok,
        Ok(Err(Fail(s))) => s,
        Err(_) => {
            set_error("internal panic");
            NccStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(fail(NccStatus::NullArgument, &format!("{what} is NULL")));
    }
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(NccStatus::InvalidArgument, &format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(h: *const T, what: &str) -> Result<&'a T, Fail> {
    unsafe { h.as_ref() }.ok_or_else(|| fail(NccStatus::NullArgument, &format!("{what} is NULL")))
}

unsafe fn handle_mut<'a, T>(h: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    unsafe { h.as_mut() }.ok_or_else(|| fail(NccStatus::NullArgument, &format!("{what} is NULL")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    unsafe { handle_mut(p, what) }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ncc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ncc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Loads and validates a JSON experiment config.
///
/// # Safety
/// `path` must be NULL or a NUL-terminated string; `out` must be NULL or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ncc_experiment_load(path: *const c_char, out_handle: *mut *mut NccExperiment) -> NccStatus {
    guard(|| {
        let path = unsafe { path_arg(path, "path")? };
        let slot = unsafe { out(out_handle, "out")? };
        let loaded = LoadedConfig::from_file(&path).map_err(ncc::Error::from)?;
        *slot = Box::into_raw(Box::new(NccExperiment { loaded }));
        Ok(())
    })
}

/// # Safety
/// `h` must be NULL or a handle from [`ncc_experiment_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ncc_experiment_free(h: *mut NccExperiment) {
    if !h.is_null() {
        drop(unsafe { Box::from_raw(h) });
    }
}

/// Replaces the configured seed list.
///
/// # Safety
/// `seeds` must point to `n` readable values.
#[no_mangle]
pub unsafe extern "C" fn ncc_experiment_set_seeds(h: *mut NccExperiment, seeds: *const u64, n: usize) -> NccStatus {
    guard(|| {
        let h = unsafe { handle_mut(h, "experiment")? };
        if n == 0 {
            return Err(fail(NccStatus::InvalidArgument, "at least one seed is required"));
        }
        if seeds.is_null() {
            return Err(fail(NccStatus::NullArgument, "seeds is NULL"));
        }
        h.loaded.cfg.seeds = unsafe { std::slice::from_raw_parts(seeds, n) }.to_vec();
        Ok(())
    })
}

/// Overrides the number of training episodes per seed.
///
/// # Safety
/// `h` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ncc_experiment_set_episodes(h: *mut NccExperiment, episodes: usize) -> NccStatus {
    guard(|| {
        unsafe { handle_mut(h, "experiment")? }.loaded.cfg.episodes = episodes;
        Ok(())
    })
}

/// Trains every seed and writes the run directory. `out_dir` may be NULL to
/// use `NCC_OUT_DIR`, the config's `output_dir` or `runs/<name>`. A seed that
/// fails numerically does not make the call fail; inspect the report.
///
/// # Safety
/// `h` must be a live handle; `out_dir` NULL or NUL-terminated; `report`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ncc_experiment_run(
    h: *const NccExperiment,
    out_dir: *const c_char,
    report: *mut *mut NccReport,
) -> NccStatus {
    guard(|| {
        let h = unsafe { handle(h, "experiment")? };
        let explicit = if out_dir.is_null() {
            None
        } else {
            Some(unsafe { path_arg(out_dir, "out_dir")? })
        };
        let slot = unsafe { out(report, "report")? };
        let dir = harness::resolve_out_dir(&h.loaded, explicit.as_deref());
        let r = harness::run_experiment(&h.loaded, &dir)?;
        *slot = Box::into_raw(Box::new(NccReport { report: r }));
        Ok(())
    })
}

/// Greedy evaluation of a checkpoint written for this config.
///
/// # Safety
/// `h` must be a live handle, `checkpoint` NUL-terminated, `mean` and `std`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ncc_evaluate_checkpoint(
    h: *const NccExperiment,
    checkpoint: *const c_char,
    episodes: usize,
    mean: *mut f64,
    std: *mut f64,
) -> NccStatus {
    guard(|| {
        let h = unsafe { handle(h, "experiment")? };
        let path = unsafe { path_arg(checkpoint, "checkpoint")? };
        let (mean, std) = unsafe { (out(mean, "mean")?, out(std, "std")?) };
        if episodes == 0 {
            return Err(fail(NccStatus::InvalidArgument, "episodes must be at least 1"));
        }
        let s = harness::evaluate_checkpoint(&path, &h.loaded, episodes)?;
        *mean = s.mean;
        *std = s.std;
        Ok(())
    })
}

/// # Safety
/// `r` must be NULL or a report not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ncc_report_free(r: *mut NccReport) {
    if !r.is_null() {
        drop(unsafe { Box::from_raw(r) });
    }
}

/// Number of seeds in the report; 0 for NULL.
///
/// # Safety
/// `r` must be NULL or a live report.
#[no_mangle]
pub unsafe extern "C" fn ncc_report_seed_count(r: *const NccReport) -> usize {
    unsafe { r.as_ref() }.map_or(0, |r| r.report.seeds.len())
}

/// # Safety
/// `r` must be a live report and `result` writable.
#[no_mangle]
pub unsafe extern "C" fn ncc_report_seed(r: *const NccReport, index: usize, result: *mut NccSeedResult) -> NccStatus {
    guard(|| {
        let r = unsafe { handle(r, "report")? };
        let slot = unsafe { out(result, "result")? };
        let s = r
            .report
            .seeds
            .get(index)
            .ok_or_else(|| fail(NccStatus::InvalidArgument, &format!("seed index {index} out of range")))?;
        *slot = NccSeedResult {
            seed: s.seed,
            failed: s.failure.is_some(),
            episodes_completed: s.records.len(),
            final_mean_reward: s.final_mean_reward(100).unwrap_or(f64::NAN),
            eval_mean: s.final_eval.as_ref().map_or(f64::NAN, |e| e.mean),
        };
        Ok(())
    })
}

fn count_failed(reports: &[ncc::verify::CheckReport], failed: &mut usize) -> Result<(), Fail> {
    *failed = reports.iter().filter(|r| !r.passed).count();
    if *failed > 0 {
        let names: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
        return Err(fail(NccStatus::ChecksFailed, &format!("failed checks: {}", names.join(", "))));
    }
    Ok(())
}

/// Finite-difference gradient suite. `failed` receives the number of
/// failing checks.
///
/// # Safety
/// `failed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncc_run_gradcheck(seed: u64, instances: usize, failed: *mut usize) -> NccStatus {
    guard(|| {
        let failed = unsafe { out(failed, "failed")? };
        count_failed(&ncc::verify::gradcheck_suite(seed, instances)?, failed)
    })
}

/// KL, GCN and joint-max oracles.
///
/// # Safety
/// `failed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ncc_run_oracles(seed: u64, failed: *mut usize) -> NccStatus {
    guard(|| {
        let failed = unsafe { out(failed, "failed")? };
        count_failed(&ncc::verify::oracle_suite(seed)?, failed)
    })
}
