//! C ABI over the countcluster engine.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns a [`CcStatus`];
//! on failure a description is available from [`cc_last_error`] on the same
//! thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use countcluster::attention::{preprocess, AttentionMap, SmoothingConfig};
use countcluster::blobsim::SimParams;
use countcluster::clustering::{build_cluster_set_with, ClusterOptions, ClusterSet};
use countcluster::eval::count_components;
use countcluster::guidance::{run_baseline, run_guided, GuidanceConfig, RunResult};
use countcluster::objective::{build_targets, clustering_loss};
use countcluster::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidMap = 3,
    DegenerateMap = 4,
    Diverged = 5,
    Runtime = 6,
    Panic = 7,
}

/// Attention map handle.
pub struct CcMap(AttentionMap);

/// Cluster set handle.
pub struct CcClusterSet(ClusterSet);

/// Run result handle.
pub struct CcRunResult(RunResult);

/// Knobs for [`cc_run`]. Obtain defaults from [`cc_run_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CcRunOptions {
    pub size: usize,
    pub slots: usize,
    pub tau: f64,
    /// Constant step size for every guided timestep.
    pub alpha: f64,
    pub noise0: f64,
    pub min_area: usize,
    /// Nonzero disables the minimum center distance.
    pub disable_min_distance: i32,
    /// Nonzero scales the loss by 1/k instead of 1/sqrt(k).
    pub use_k_scaling: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: CcStatus, msg: impl Into<String>) -> CcStatus {
    set_error(msg.into());
    status
}

fn status_of(err: &Error) -> CcStatus {
    match err.root() {
        Error::InvalidMap(_) | Error::Parse(_) => CcStatus::InvalidMap,
        Error::DegenerateMap => CcStatus::DegenerateMap,
        Error::Diverged(_) => CcStatus::Diverged,
        Error::InvalidCount(_)
        | Error::InvalidThreshold(_)
        | Error::InvalidParameter(_)
        | Error::MapTooSmall { .. }
        | Error::LengthMismatch(..) => CcStatus::InvalidArgument,
        _ => CcStatus::Runtime,
    }
}

fn from_error(err: Error) -> CcStatus {
    let status = status_of(&err);
    fail(status, err.to_string())
}

fn guard(f: impl FnOnce() -> CcStatus) -> CcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(CcStatus::Panic, "internal panic"),
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, CcStatus> {
    p.as_ref().ok_or_else(|| fail(CcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> CcStatus {
    *out = Box::into_raw(Box::new(value));
    CcStatus::Ok
}

macro_rules! try_ffi {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `height * width` row-major scores into a new map.
///
/// # Safety
/// `scores` must point to `height * width` readable doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cc_map_new(
    scores: *const f64,
    height: usize,
    width: usize,
    out: *mut *mut CcMap,
) -> CcStatus {
    guard(|| {
        if scores.is_null() || out.is_null() {
            return fail(CcStatus::NullPointer, "scores or out is null");
        }
        let Some(len) = height.checked_mul(width) else {
            return fail(CcStatus::InvalidArgument, "dimensions overflow");
        };
        let values = std::slice::from_raw_parts(scores, len).to_vec();
        match AttentionMap::new(height, width, values) {
            Ok(m) => store(out, CcMap(m)),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `map` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cc_map_free(map: *mut CcMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Side length of a square map, 0 for null.
///
/// # Safety
/// `map` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_map_side(map: *const CcMap) -> usize {
    map.as_ref().map_or(0, |m| m.0.side())
}

/// Copies the scores into `buf`, which must hold `len >= side * side` values.
///
/// # Safety
/// `map` must be a live handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cc_map_copy_scores(map: *const CcMap, buf: *mut f64, len: usize) -> CcStatus {
    guard(|| {
        let m = try_ffi!(deref(map, "map"));
        if buf.is_null() {
            return fail(CcStatus::NullPointer, "buf is null");
        }
        let scores = m.0.scores();
        if len < scores.len() {
            return fail(CcStatus::InvalidArgument, format!("buffer holds {len}, need {}", scores.len()));
        }
        ptr::copy_nonoverlapping(scores.as_ptr(), buf, scores.len());
        CcStatus::Ok
    })
}

/// Default smoothing followed by min-max normalization.
///
/// # Safety
/// `raw` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_map_preprocess(raw: *const CcMap, out: *mut *mut CcMap) -> CcStatus {
    guard(|| {
        let m = try_ffi!(deref(raw, "raw"));
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is null");
        }
        match preprocess(&m.0, &SmoothingConfig::default()) {
            Ok((n, _)) => store(out, CcMap(n)),
            Err(e) => from_error(e),
        }
    })
}

/// Number of 8-connected components with score >= `tau` and at least
/// `min_area` patches.
///
/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_count_components(
    map: *const CcMap,
    tau: f64,
    min_area: usize,
    out: *mut usize,
) -> CcStatus {
    guard(|| {
        let m = try_ffi!(deref(map, "map"));
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is null");
        }
        *out = count_components(&m.0, tau, min_area);
        CcStatus::Ok
    })
}

/// Clusters a normalized map into `k` groups.
///
/// # Safety
/// `map` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_clusters_build(
    map: *const CcMap,
    k: usize,
    tau: f64,
    enforce_min_distance: i32,
    out: *mut *mut CcClusterSet,
) -> CcStatus {
    guard(|| {
        let m = try_ffi!(deref(map, "map"));
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is null");
        }
        let opts = ClusterOptions {
            enforce_min_distance: enforce_min_distance != 0,
            ..ClusterOptions::new(k, tau)
        };
        match build_cluster_set_with(&m.0, &opts) {
            Ok(cs) => store(out, CcClusterSet(cs)),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_clusters_free(set: *mut CcClusterSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Number of clusters, 0 for null.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_clusters_len(set: *const CcClusterSet) -> usize {
    set.as_ref().map_or(0, |s| s.0.k())
}

/// Relaxation passes used while selecting centers.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_clusters_relaxations(set: *const CcClusterSet) -> u32 {
    set.as_ref().map_or(0, |s| s.0.relaxation_events)
}

/// Center and radius of cluster `index`.
///
/// # Safety
/// `set` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn cc_clusters_get(
    set: *const CcClusterSet,
    index: usize,
    row: *mut usize,
    col: *mut usize,
    radius: *mut f64,
) -> CcStatus {
    guard(|| {
        let s = try_ffi!(deref(set, "set"));
        if row.is_null() || col.is_null() || radius.is_null() {
            return fail(CcStatus::NullPointer, "output pointer is null");
        }
        let Some(c) = s.0.centers.get(index) else {
            return fail(CcStatus::InvalidArgument, format!("cluster {index} out of range"));
        };
        *row = c.row;
        *col = c.col;
        *radius = s.0.radii[index];
        CcStatus::Ok
    })
}

/// Clustering loss of `map` against Gaussian targets built from `set`.
///
/// # Safety
/// Handles must be live and `total` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_clusters_loss(
    map: *const CcMap,
    set: *const CcClusterSet,
    tau: f64,
    epsilon: f64,
    total: *mut f64,
) -> CcStatus {
    guard(|| {
        let m = try_ffi!(deref(map, "map"));
        let s = try_ffi!(deref(set, "set"));
        if total.is_null() {
            return fail(CcStatus::NullPointer, "total is null");
        }
        let report = build_targets(&s.0, tau).and_then(|t| clustering_loss(&m.0, &s.0, &t, epsilon));
        match report {
            Ok(r) => {
                *total = r.total;
                CcStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

#[no_mangle]
pub extern "C" fn cc_run_options_default() -> CcRunOptions {
    let sim = SimParams::default();
    let g = GuidanceConfig::default();
    CcRunOptions {
        size: sim.size,
        slots: sim.slots,
        tau: g.tau,
        alpha: g.alpha[0],
        noise0: sim.noise0,
        min_area: g.min_area,
        disable_min_distance: 0,
        use_k_scaling: 0,
    }
}

/// One full trajectory for target count `k`; `guided == 0` runs the baseline.
/// `options` may be null for defaults.
///
/// # Safety
/// `options` must be null or readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_run(
    seed: u64,
    k: usize,
    guided: i32,
    options: *const CcRunOptions,
    out: *mut *mut CcRunResult,
) -> CcStatus {
    guard(|| {
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is null");
        }
        let o = options.as_ref().copied().unwrap_or_else(|| cc_run_options_default());
        let sim = SimParams {
            size: o.size,
            slots: o.slots,
            noise0: o.noise0,
            ..SimParams::default()
        };
        let cfg = GuidanceConfig {
            k,
            tau: o.tau,
            alpha: vec![o.alpha],
            min_area: o.min_area,
            disable_min_distance: o.disable_min_distance != 0,
            use_k_scaling: o.use_k_scaling != 0,
            ..GuidanceConfig::default()
        };
        let res = if guided != 0 {
            run_guided(seed, &cfg, &sim)
        } else {
            run_baseline(seed, &cfg, &sim)
        };
        match res {
            Ok(r) => store(out, CcRunResult(r)),
            Err(e) => from_error(e),
        }
    })
}

/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_run_free(result: *mut CcRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Objects counted on the final map.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_run_counted(result: *const CcRunResult) -> usize {
    result.as_ref().map_or(0, |r| r.0.counted)
}

/// Last guidance loss; returns 0 and leaves `loss` untouched when the run had
/// no guidance updates.
///
/// # Safety
/// `result` must be a live handle and `loss` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_run_loss_final(result: *const CcRunResult, loss: *mut f64) -> i32 {
    match (result.as_ref(), loss.is_null()) {
        (Some(r), false) => match r.0.loss_final {
            Some(l) => {
                *loss = l;
                1
            }
            None => 0,
        },
        _ => 0,
    }
}

/// Copy of the final normalized map.
///
/// # Safety
/// `result` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cc_run_final_map(result: *const CcRunResult, out: *mut *mut CcMap) -> CcStatus {
    guard(|| {
        let r = try_ffi!(deref(result, "result"));
        if out.is_null() {
            return fail(CcStatus::NullPointer, "out is null");
        }
        match &r.0.final_map {
            Some(m) => store(out, CcMap(m.clone())),
            None => fail(CcStatus::Runtime, "result carries no final map"),
        }
    })
}

/// Result JSON as a newly allocated string; release with [`cc_string_free`].
/// Null on failure.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn cc_run_to_json(result: *const CcRunResult) -> *mut c_char {
    let Some(r) = result.as_ref() else {
        set_error("result is null".into());
        return ptr::null_mut();
    };
    match serde_json::to_string(&r.0) {
        Ok(s) => CString::new(s).map_or(ptr::null_mut(), CString::into_raw),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Copies the last error into an owned Rust string; convenience for Rust
/// callers and tests.
pub fn last_error_string() -> Option<String> {
    let p = cc_last_error();
    if p.is_null() {
        None
    } else {
        Some(unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
    }
}
