//! C ABI over the `hj-switch` library.
//!
//! Objects cross the boundary as opaque handles created by `*_parse`,
//! `*_build` or a solver call and released with the matching `*_free`.
//! Every fallible call returns an [`HjsStatus`]; on failure the message is
//! available from [`hjs_last_error_message`] on the same thread.
//! Panics are caught and reported as [`HjsStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hj_switch::markov::transition_matrix;
use hj_switch::mather::{build_lp, solve_lp, FaceOptions};
use hj_switch::model::{CouplingMatrix, GridVectorFunction};
use hj_switch::scenario::{parse_scenario, Scenario, ScenarioError};
use hj_switch::selection::run_selection;
use hj_switch::solver::{
    estimate_critical_value, solve_discounted_with, DiscreteScheme, SolveOptions,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HjsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    ValidationError = 4,
    NumericError = 5,
    InvalidArgument = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A parsed and validated scenario.
pub struct HjsScenario {
    inner: Scenario,
}

/// A discretised problem ready for solving.
pub struct HjsScheme {
    inner: DiscreteScheme,
}

/// A grid vector function: `modes × nodes` values, mode-major.
pub struct HjsGrid {
    inner: GridVectorFunction,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: HjsStatus, message: impl Into<String>) -> HjsStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> HjsStatus) -> HjsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(HjsStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn numeric(e: impl std::fmt::Display) -> HjsStatus {
    fail(HjsStatus::NumericError, e.to_string())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn hjs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hjs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses scenario text (UTF-8, NUL-terminated) into `*out`.
///
/// # Safety
/// `text` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjs_scenario_parse(
    text: *const c_char,
    out: *mut *mut HjsScenario,
) -> HjsStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return fail(HjsStatus::NullPointer, "null argument");
        }
        let Ok(s) = CStr::from_ptr(text).to_str() else {
            return fail(HjsStatus::InvalidUtf8, "scenario text is not UTF-8");
        };
        match parse_scenario(s) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(HjsScenario { inner }));
                HjsStatus::Ok
            }
            Err(e @ ScenarioError::Parse { .. }) => fail(HjsStatus::ParseError, e.to_string()),
            Err(e @ ScenarioError::Validation { .. }) => {
                fail(HjsStatus::ValidationError, e.to_string())
            }
        }
    })
}

/// # Safety
/// `scenario` must come from [`hjs_scenario_parse`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn hjs_scenario_free(scenario: *mut HjsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Builds the scheme described by the scenario's problem and numerics.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjs_scheme_build(
    scenario: *const HjsScenario,
    out: *mut *mut HjsScheme,
) -> HjsStatus {
    guard(|| {
        let (Some(s), false) = (scenario.as_ref(), out.is_null()) else {
            return fail(HjsStatus::NullPointer, "null argument");
        };
        match s.inner.scheme() {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(HjsScheme { inner }));
                HjsStatus::Ok
            }
            Err(e) => numeric(e),
        }
    })
}

/// # Safety
/// `scheme` must come from [`hjs_scheme_build`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn hjs_scheme_free(scheme: *mut HjsScheme) {
    if !scheme.is_null() {
        drop(Box::from_raw(scheme));
    }
}

/// Node count, mode count, control count and time step. Any output
/// pointer may be NULL.
///
/// # Safety
/// `scheme` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_scheme_shape(
    scheme: *const HjsScheme,
    nodes: *mut usize,
    modes: *mut usize,
    controls: *mut usize,
    h: *mut f64,
) -> HjsStatus {
    guard(|| {
        let Some(s) = scheme.as_ref() else {
            return fail(HjsStatus::NullPointer, "null scheme");
        };
        let s = &s.inner;
        if let Some(p) = nodes.as_mut() {
            *p = s.nodes();
        }
        if let Some(p) = modes.as_mut() {
            *p = s.modes();
        }
        if let Some(p) = controls.as_mut() {
            *p = s.controls().len();
        }
        if let Some(p) = h.as_mut() {
            *p = s.h();
        }
        HjsStatus::Ok
    })
}

/// Solves the discounted system at rate `lambda` and constant `c`.
///
/// # Safety
/// `scheme` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjs_solve_discounted(
    scheme: *const HjsScheme,
    lambda: f64,
    c: f64,
    tol: f64,
    out: *mut *mut HjsGrid,
) -> HjsStatus {
    guard(|| {
        let (Some(s), false) = (scheme.as_ref(), out.is_null()) else {
            return fail(HjsStatus::NullPointer, "null argument");
        };
        if tol.is_nan() || tol <= 0.0 {
            return fail(
                HjsStatus::InvalidArgument,
                format!("tolerance must be positive, got {tol}"),
            );
        }
        let opts = SolveOptions {
            tol,
            ..SolveOptions::default()
        };
        match solve_discounted_with(&s.inner, lambda, c, &opts, None) {
            Ok(sol) => {
                *out = Box::into_raw(Box::new(HjsGrid { inner: sol.u }));
                HjsStatus::Ok
            }
            Err(e) => numeric(e),
        }
    })
}

/// # Safety
/// `grid` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjs_grid_nodes(grid: *const HjsGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.inner.nodes())
}

/// # Safety
/// `grid` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hjs_grid_modes(grid: *const HjsGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.inner.modes())
}

/// Copies the `modes × nodes` values (mode-major) into `buffer`.
///
/// # Safety
/// `grid` must be a live handle and `buffer` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hjs_grid_values(
    grid: *const HjsGrid,
    buffer: *mut f64,
    len: usize,
) -> HjsStatus {
    guard(|| {
        let (Some(g), false) = (grid.as_ref(), buffer.is_null()) else {
            return fail(HjsStatus::NullPointer, "null argument");
        };
        let values = g.inner.values();
        if len < values.len() {
            return fail(
                HjsStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", values.len()),
            );
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buffer, values.len());
        HjsStatus::Ok
    })
}

/// # Safety
/// `grid` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn hjs_grid_free(grid: *mut HjsGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Vanishing-discount estimate of the critical value over strictly
/// decreasing rates; `error` may be NULL.
///
/// # Safety
/// `lambdas` must hold `len` doubles; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_estimate_critical_value(
    scheme: *const HjsScheme,
    lambdas: *const f64,
    len: usize,
    value: *mut f64,
    error: *mut f64,
) -> HjsStatus {
    guard(|| {
        let (Some(s), false, false) = (scheme.as_ref(), lambdas.is_null(), value.is_null()) else {
            return fail(HjsStatus::NullPointer, "null argument");
        };
        let rates = std::slice::from_raw_parts(lambdas, len);
        match estimate_critical_value(&s.inner, rates, &SolveOptions::default()) {
            Ok(est) => {
                *value = est.value;
                if let Some(e) = error.as_mut() {
                    *e = est.error;
                }
                HjsStatus::Ok
            }
            Err(e) => numeric(e),
        }
    })
}

/// Critical value from the Mather program; `duality_gap` may be NULL.
///
/// # Safety
/// `scheme` must be a live handle; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hjs_mather_critical_value(
    scheme: *const HjsScheme,
    tol: f64,
    value: *mut f64,
    duality_gap: *mut f64,
) -> HjsStatus {
    guard(|| {
        let (Some(s), false) = (scheme.as_ref(), value.is_null()) else {
            return fail(HjsStatus::NullPointer, "null argument");
        };
        let result = build_lp(&s.inner).and_then(|lp| solve_lp(&s.inner, &lp, tol));
        match result {
            Ok(sol) => {
                *value = sol.critical_value;
                if let Some(g) = duality_gap.as_mut() {
                    *g = sol.duality_gap;
                }
                HjsStatus::Ok
            }
            Err(e) => numeric(e),
        }
    })
}

/// Selected critical solution, using `measures` random face objectives.
///
/// # Safety
/// `scheme` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hjs_compute_u0(
    scheme: *const HjsScheme,
    measures: usize,
    seed: u64,
    out: *mut *mut HjsGrid,
) -> HjsStatus {
    guard(|| {
        let (Some(s), false) = (scheme.as_ref(), out.is_null()) else {
            return fail(HjsStatus::NullPointer, "null argument");
        };
        if measures == 0 {
            return fail(
                HjsStatus::InvalidArgument,
                "at least one measure is required",
            );
        }
        let face = FaceOptions {
            count: measures,
            seed,
            ..FaceOptions::default()
        };
        match run_selection(&s.inner, &face, 1e-10) {
            Ok(outcome) => {
                *out = Box::into_raw(Box::new(HjsGrid { inner: outcome.u0 }));
                HjsStatus::Ok
            }
            Err(e) => numeric(e),
        }
    })
}

/// Writes `e^{−tB}` (row-major, `m × m`) into `out` for the row-major
/// coupling matrix `b`.
///
/// # Safety
/// `b` and `out` must each hold `m·m` doubles.
#[no_mangle]
pub unsafe extern "C" fn hjs_transition_matrix(
    b: *const f64,
    m: usize,
    t: f64,
    out: *mut f64,
) -> HjsStatus {
    guard(|| {
        if b.is_null() || out.is_null() {
            return fail(HjsStatus::NullPointer, "null argument");
        }
        if m == 0 {
            return fail(HjsStatus::InvalidArgument, "empty coupling matrix");
        }
        let flat = std::slice::from_raw_parts(b, m * m);
        let coupling = match CouplingMatrix::from_flat(m, flat) {
            Ok(c) => c,
            Err(e) => return fail(HjsStatus::InvalidArgument, e.to_string()),
        };
        match transition_matrix(&coupling, t) {
            Ok(p) => {
                let dst = std::slice::from_raw_parts_mut(out, m * m);
                for (ix, slot) in dst.iter_mut().enumerate() {
                    *slot = p.get(ix / m, ix % m);
                }
                HjsStatus::Ok
            }
            Err(e) => fail(HjsStatus::InvalidArgument, e.to_string()),
        }
    })
}
