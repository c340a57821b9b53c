//! C ABI over the slicelab library.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `*_free` function. Every function returns an [`SlStatus`]; on failure a
//! description is kept per thread and can be copied out with
//! [`sl_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use slicelab::osra::SliceTrace;
use slicelab::{Error, OsraOutcome, ScenarioConfig, SliceId, TransferRule, ValidConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// The scenario text is not well-formed.
    Parse = 3,
    /// Well-formed input that violates an invariant.
    InvalidInput = 4,
    /// An output buffer is shorter than required.
    BufferTooSmall = 5,
    UnknownSlice = 6,
    /// The computation itself failed.
    Runtime = 7,
    Panic = 8,
}

/// A validated scenario with its run settings.
pub struct SlScenario {
    cfg: ValidConfig,
}

/// The result of one reconfiguration run.
pub struct SlOutcome {
    outcome: OsraOutcome,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlRunSummary {
    pub iterations: usize,
    pub converged: bool,
    pub max_iters_exceeded: bool,
    /// Stop metric of the last iteration.
    pub final_stop_metric: f64,
}

/// QoE measured at the final allocation.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SlQoe {
    pub mean_delay_ms: f64,
    pub max_delay_ms: f64,
    pub throughput: f64,
    pub penalty: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(SlStatus, String);

fn status_of(e: &Error) -> SlStatus {
    match e {
        Error::Parse(_) => SlStatus::Parse,
        Error::UnknownSlice(_) => SlStatus::UnknownSlice,
        Error::Invalid(_) | Error::DimensionMismatch { .. } | Error::DegenerateDelta(_) | Error::NoProbes => {
            SlStatus::InvalidInput
        }
        _ => SlStatus::Runtime,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            SlStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SlStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    // SAFETY: the caller guarantees that a non-null pointer is valid.
    unsafe { p.as_ref() }.ok_or_else(|| Failure(SlStatus::NullPointer, format!("{what} is null")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Result<*mut T, Failure> {
    if p.is_null() {
        Err(Failure(SlStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(p)
    }
}

fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SlStatus::NullPointer, format!("{what} is null")));
    }
    // SAFETY: non-null and NUL-terminated per the caller's contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|e| Failure(SlStatus::InvalidUtf8, format!("{what}: {e}")))
}

fn boxed_scenario(cfg: ScenarioConfig, out: *mut *mut SlScenario) -> Result<(), Failure> {
    let out = out_ptr(out, "out")?;
    let cfg = cfg.validate()?;
    // SAFETY: `out` is non-null and writable per the caller's contract.
    unsafe { *out = Box::into_raw(Box::new(SlScenario { cfg })) };
    Ok(())
}

/// Parses and validates a scenario from NUL-terminated TOML text.
///
/// # Safety
/// `toml` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_from_toml(toml: *const c_char, out: *mut *mut SlScenario) -> SlStatus {
    guard(|| {
        let text = c_str(toml, "toml")?;
        boxed_scenario(ScenarioConfig::from_toml(text)?, out)
    })
}

/// The built-in three-slice reference scenario.
///
/// # Safety
/// `out` must be a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_reference(out: *mut *mut SlScenario) -> SlStatus {
    guard(|| boxed_scenario(ScenarioConfig::reference(), out))
}

/// Releases a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_free(scenario: *mut SlScenario) {
    if !scenario.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(unsafe { Box::from_raw(scenario) })));
    }
}

/// Number of slices and of resource coordinates (edges, then cores).
///
/// # Safety
/// `scenario` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_dims(
    scenario: *const SlScenario,
    n_slices: *mut usize,
    n_resources: *mut usize,
) -> SlStatus {
    guard(|| {
        let s = non_null(scenario, "scenario")?;
        let (a, b) = (out_ptr(n_slices, "n_slices")?, out_ptr(n_resources, "n_resources")?);
        unsafe {
            *a = s.cfg.scenario.slices().len();
            *b = s.cfg.scenario.dim();
        }
        Ok(())
    })
}

/// Writes the slice ids in allocation order into `ids[0..len]`.
///
/// # Safety
/// `ids` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_slice_ids(scenario: *const SlScenario, ids: *mut u32, len: usize) -> SlStatus {
    guard(|| {
        let s = non_null(scenario, "scenario")?;
        let all: Vec<u32> = s.cfg.initial_alloc().ids().map(|id| id.0).collect();
        if len < all.len() {
            return Err(Failure(SlStatus::BufferTooSmall, format!("need {} slice ids, got room for {len}", all.len())));
        }
        let ids = out_ptr(ids, "ids")?;
        unsafe { ptr::copy_nonoverlapping(all.as_ptr(), ids, all.len()) };
        Ok(())
    })
}

/// Selects the transfer rule by name: `algorithm1`, `conservative` or
/// `exchange`.
///
/// # Safety
/// `scenario` must be a live handle and `rule` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn sl_scenario_set_transfer_rule(scenario: *mut SlScenario, rule: *const c_char) -> SlStatus {
    guard(|| {
        let rule: TransferRule = c_str(rule, "rule")?
            .parse()
            .map_err(|e: String| Failure(SlStatus::InvalidInput, e))?;
        // SAFETY: live, exclusively borrowed handle per the caller's contract.
        let s = unsafe { scenario.as_mut() }.ok_or(Failure(SlStatus::NullPointer, "scenario is null".to_string()))?;
        s.cfg.config.osra.transfer_rule = rule;
        Ok(())
    })
}

/// Euclidean projection of `y[0..n]` onto `{x >= 0, sum(x) <= 1}`, written
/// to `out[0..n]`. The buffers may alias.
///
/// # Safety
/// Both pointers must be valid for `n` values.
#[no_mangle]
pub unsafe extern "C" fn sl_project_capped_simplex(y: *const f64, out: *mut f64, n: usize) -> SlStatus {
    guard(|| {
        if n == 0 {
            return Ok(());
        }
        if y.is_null() || out.is_null() {
            return Err(Failure(SlStatus::NullPointer, "y or out is null".into()));
        }
        let input = unsafe { std::slice::from_raw_parts(y, n) }.to_vec();
        if let Some(bad) = input.iter().find(|v| !v.is_finite()) {
            return Err(Failure(SlStatus::InvalidInput, format!("non-finite entry {bad}")));
        }
        let x = slicelab::project_capped_simplex(&input);
        unsafe { ptr::copy_nonoverlapping(x.as_ptr(), out, n) };
        Ok(())
    })
}

/// Runs the reconfiguration from the scenario's initial allocation.
///
/// # Safety
/// `scenario` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_run_osra(scenario: *const SlScenario, seed: u64, out: *mut *mut SlOutcome) -> SlStatus {
    guard(|| {
        let s = non_null(scenario, "scenario")?;
        let out = out_ptr(out, "out")?;
        let c = &s.cfg.config;
        let outcome = slicelab::run_osra(&s.cfg.scenario, c.initial_alloc.clone(), c.new_slice, &c.sim, &c.osra, seed)?;
        unsafe { *out = Box::into_raw(Box::new(SlOutcome { outcome })) };
        Ok(())
    })
}

/// Releases an outcome. Null is ignored.
///
/// # Safety
/// `outcome` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sl_outcome_free(outcome: *mut SlOutcome) {
    if !outcome.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(unsafe { Box::from_raw(outcome) })));
    }
}

/// # Safety
/// `outcome` must be a live handle and `summary` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_outcome_summary(outcome: *const SlOutcome, summary: *mut SlRunSummary) -> SlStatus {
    guard(|| {
        let o = &non_null(outcome, "outcome")?.outcome;
        let summary = out_ptr(summary, "summary")?;
        unsafe {
            *summary = SlRunSummary {
                iterations: o.iterations(),
                converged: o.converged,
                max_iters_exceeded: o.max_iters_exceeded,
                final_stop_metric: o.traces.last().map_or(0.0, |t| t.stop_metric),
            }
        };
        Ok(())
    })
}

/// Final allocation of one slice: `len` must be at least the number of
/// resource coordinates.
///
/// # Safety
/// `outcome` must be a live handle and `out` valid for `len` values.
#[no_mangle]
pub unsafe extern "C" fn sl_outcome_final_alloc(
    outcome: *const SlOutcome,
    slice: u32,
    out: *mut f64,
    len: usize,
) -> SlStatus {
    guard(|| {
        let o = &non_null(outcome, "outcome")?.outcome;
        let row = o.final_alloc.row(SliceId(slice))?.coords();
        if len < row.len() {
            return Err(Failure(SlStatus::BufferTooSmall, format!("need {} values, got room for {len}", row.len())));
        }
        let out = out_ptr(out, "out")?;
        unsafe { ptr::copy_nonoverlapping(row.as_ptr(), out, row.len()) };
        Ok(())
    })
}

/// QoE of one slice measured at the final allocation.
///
/// # Safety
/// `outcome` must be a live handle and `qoe` writable.
#[no_mangle]
pub unsafe extern "C" fn sl_outcome_final_qoe(outcome: *const SlOutcome, slice: u32, qoe: *mut SlQoe) -> SlStatus {
    guard(|| {
        let o = &non_null(outcome, "outcome")?.outcome;
        let t: &SliceTrace = o
            .final_qoe
            .iter()
            .find(|t| t.slice == SliceId(slice))
            .ok_or_else(|| Failure::from(Error::UnknownSlice(SliceId(slice))))?;
        let qoe = out_ptr(qoe, "qoe")?;
        unsafe {
            *qoe = SlQoe {
                mean_delay_ms: t.mean_delay_ms,
                max_delay_ms: t.max_delay_ms,
                throughput: t.sample.throughput,
                penalty: t.penalty,
            }
        };
        Ok(())
    })
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length
/// plus one, so a caller can size the buffer; 1 means no error.
///
/// # Safety
/// `buf` must be valid for `len` bytes, or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn sl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    if !buf.is_null() && len > 0 {
        let n = msg.len().min(len - 1);
        unsafe {
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
    }
    msg.len() + 1
}

/// Library version as a static C string.
#[no_mangle]
pub extern "C" fn sl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
