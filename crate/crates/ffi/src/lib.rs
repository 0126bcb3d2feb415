//! C interface to the `geope` optimisers.
//!
//! Objects are exposed through opaque handles that the caller releases with
//! the matching `*_free` function. Every call returns a [`GeopeStatus`]; on
//! failure, [`geope_last_error_message`] describes the most recent error on
//! the calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use geope::geope::RunSettings;
use geope::hyperopt::Method;
use geope::model::{infidelity, rydberg_problem, ControlProblem, GateName, GateTarget, PulseSequence};
use geope::trace::OptRunTrace;
use geope::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeopeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Unknown gate or method, or invalid settings.
    Config = 3,
    /// A numerical failure (for example a non positive-definite Hessian).
    Numerical = 4,
    /// The output buffer is too small; the required length is reported.
    BufferTooSmall = 5,
    /// An internal panic was caught.
    Panic = 6,
}

/// A control problem on the Rydberg lattice.
pub struct GeopeProblem {
    inner: ControlProblem,
}

/// Outcome of one optimisation run.
pub struct GeopeResult {
    trace: OptRunTrace,
    pulses: PulseSequence,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn status_of(err: &Error) -> GeopeStatus {
    match err {
        Error::UnknownGate(_) | Error::Config(_) | Error::UnsupportedLattice(_) | Error::InvalidRestriction(_) => {
            GeopeStatus::Config
        }
        Error::DimensionMismatch { .. } | Error::InvalidPauliWord(_) | Error::InvalidProblem(_) => {
            GeopeStatus::InvalidArgument
        }
        _ => GeopeStatus::Numerical,
    }
}

fn guard(body: impl FnOnce() -> Result<(), (GeopeStatus, String)>) -> GeopeStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            GeopeStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GeopeStatus::Panic
        }
    }
}

fn lift(err: Error) -> (GeopeStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (GeopeStatus, String) {
    (GeopeStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (GeopeStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (GeopeStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread (empty after a success).
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn geope_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn geope_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds the Rydberg control problem for `gate` ("toffoli", "ccz" or "qft")
/// on `qubits` atoms with coupling scale `j0` and solution threshold `epsilon`.
///
/// # Safety
/// `gate` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn geope_problem_new_rydberg(
    gate: *const c_char,
    qubits: usize,
    j0: f64,
    epsilon: f64,
    out: *mut *mut GeopeProblem,
) -> GeopeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let name: GateName = read_str(gate, "gate")?.parse().map_err(lift)?;
        let target = GateTarget::new(name, qubits).map_err(lift)?;
        let inner = rydberg_problem(qubits, j0, &target, epsilon).map_err(lift)?;
        *out = Box::into_raw(Box::new(GeopeProblem { inner }));
        Ok(())
    })
}

/// Releases a problem. Null is ignored.
///
/// # Safety
/// `problem` must come from [`geope_problem_new_rydberg`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn geope_problem_free(problem: *mut GeopeProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of controls `K` per layer (0 for a null handle).
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn geope_problem_control_count(problem: *const GeopeProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.control_count())
}

/// Hilbert-space dimension `2^n` (0 for a null handle).
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn geope_problem_dim(problem: *const GeopeProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.inner.dim())
}

/// Infidelity of the row-major `layers x K` pulse table `values`.
///
/// # Safety
/// `values` must point to `layers * K` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn geope_infidelity(
    problem: *const GeopeProblem,
    values: *const f64,
    layers: usize,
    out: *mut f64,
) -> GeopeStatus {
    guard(|| {
        let problem = problem.as_ref().ok_or_else(|| null("problem"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let k = problem.inner.control_count();
        let data = std::slice::from_raw_parts(values, layers * k).to_vec();
        let phi = PulseSequence::from_values(layers, k, data).map_err(lift)?;
        *out = infidelity(&problem.inner, &phi).map_err(lift)?;
        Ok(())
    })
}

/// Settings of one run; see [`geope_run_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GeopeRunOptions {
    pub layers: usize,
    pub max_iters: usize,
    pub seed: u64,
    /// Half-width of the uniform initial controls.
    pub init_scale: f64,
    /// Solution threshold; values <= 0 use the problem's threshold.
    pub epsilon: f64,
}

/// Defaults: 20 layers, 200 iterations, seed 0, init scale 1, problem threshold.
#[no_mangle]
pub extern "C" fn geope_run_options_default() -> GeopeRunOptions {
    let base = RunSettings::new(20, 200, 0);
    GeopeRunOptions { layers: base.layers, max_iters: base.max_iters, seed: base.seed, init_scale: base.init_scale, epsilon: 0.0 }
}

/// Runs `method` ("geope", "grape-adam", "grape-nr" or "grape-rfo") with
/// its hyperparameter (`eta_max`, learning rate, `delta` or `kappa`).
///
/// # Safety
/// `problem` must be a live handle, `method` a NUL-terminated string,
/// `options` and `out` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn geope_solve(
    problem: *const GeopeProblem,
    method: *const c_char,
    hyperparameter: f64,
    options: *const GeopeRunOptions,
    out: *mut *mut GeopeResult,
) -> GeopeStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let problem = problem.as_ref().ok_or_else(|| null("problem"))?;
        let options = options.as_ref().ok_or_else(|| null("options"))?;
        let method: Method = read_str(method, "method")?.parse().map_err(lift)?;
        let mut run = RunSettings::new(options.layers, options.max_iters, options.seed);
        run.init_scale = options.init_scale;
        run.epsilon = (options.epsilon > 0.0).then_some(options.epsilon);
        let outcome = method.run(&problem.inner, hyperparameter, run).map_err(lift)?;
        *out = Box::into_raw(Box::new(GeopeResult { trace: outcome.trace, pulses: outcome.pulses }));
        Ok(())
    })
}

/// Releases a result. Null is ignored.
///
/// # Safety
/// `result` must come from [`geope_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn geope_result_free(result: *mut GeopeResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Iteration at which the run was solved, or -1 (also for a null handle).
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn geope_result_solved_at(result: *const GeopeResult) -> i64 {
    result.as_ref().and_then(|r| r.trace.solved_at()).map_or(-1, |m| m as i64)
}

/// Number of steps taken (0 for a null handle).
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn geope_result_iterations(result: *const GeopeResult) -> usize {
    result.as_ref().map_or(0, |r| r.trace.iterations())
}

/// Last recorded infidelity (1 for a null handle).
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn geope_result_final_infidelity(result: *const GeopeResult) -> f64 {
    result.as_ref().and_then(|r| r.trace.final_infidelity()).unwrap_or(1.0)
}

unsafe fn copy_out(data: &[f64], buffer: *mut f64, capacity: usize, required: *mut usize) -> Result<(), (GeopeStatus, String)> {
    if !required.is_null() {
        *required = data.len();
    }
    if capacity < data.len() {
        return Err((GeopeStatus::BufferTooSmall, format!("buffer holds {capacity} values, {} needed", data.len())));
    }
    if data.is_empty() {
        return Ok(());
    }
    if buffer.is_null() {
        return Err(null("buffer"));
    }
    ptr::copy_nonoverlapping(data.as_ptr(), buffer, data.len());
    Ok(())
}

/// Copies the per-iteration infidelities (iteration 0 first). `required`
/// (may be null) receives the number of values; pass `capacity = 0` to query it.
///
/// # Safety
/// `buffer` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn geope_result_infidelities(
    result: *const GeopeResult,
    buffer: *mut f64,
    capacity: usize,
    required: *mut usize,
) -> GeopeStatus {
    guard(|| {
        let result = result.as_ref().ok_or_else(|| null("result"))?;
        let values: Vec<f64> = result.trace.records().iter().map(|r| r.infidelity).collect();
        copy_out(&values, buffer, capacity, required)
    })
}

/// Copies the final pulses, row-major `layers x K`.
///
/// # Safety
/// `buffer` must hold `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn geope_result_pulses(
    result: *const GeopeResult,
    buffer: *mut f64,
    capacity: usize,
    required: *mut usize,
) -> GeopeStatus {
    guard(|| {
        let result = result.as_ref().ok_or_else(|| null("result"))?;
        copy_out(result.pulses.as_slice(), buffer, capacity, required)
    })
}
