//! C ABI over the safenav core.
//!
//! Every fallible call returns a `SafenavStatus`; on failure the message is
//! kept per thread and read back with `safenav_last_error`. Scenarios and run
//! results are opaque handles released with their `_free` functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use safenav::cbf_composer::BarrierEvaluation;
use safenav::cli::exit_code_for_outcome;
use safenav::safety_filter::{solve_filter, FilterConfig};
use safenav::sim_engine::{run_source, RunOptions, RunOutcome, ScenarioSource};
use safenav::smooth_math;
use safenav::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafenavStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Simulation = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// A loaded scenario with any overrides applied.
pub struct SafenavScenario {
    source: ScenarioSource,
}

/// The trajectory and report of one finished run.
pub struct SafenavRun {
    outcome: RunOutcome,
}

/// One control step of a trajectory.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SafenavRecord {
    pub t: f64,
    pub qx: f64,
    pub qy: f64,
    pub v: f64,
    pub theta: f64,
    pub u1: f64,
    pub u2: f64,
    pub v_star1: f64,
    pub v_star2: f64,
    pub h: f64,
    pub psi0: f64,
    pub min_xi: f64,
    pub min_phi: f64,
    pub omega: f64,
    pub lambda: f64,
    pub active: bool,
    pub k: u64,
}

/// Outcome of a run. `time_to_goal` is NaN when the goal was not reached.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SafenavSummary {
    pub reached: bool,
    pub crashed: bool,
    pub audit_passed: bool,
    pub time_to_goal: f64,
    pub final_time: f64,
    pub final_distance: f64,
    pub min_h: f64,
    pub min_psi0: f64,
    pub max_abs_v: f64,
    pub steps: usize,
    /// Same value the command-line tool exits with.
    pub exit_code: i32,
}

/// Filter weights and slopes.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SafenavFilterParams {
    pub gamma: f64,
    pub alpha: f64,
}

/// Closed-form solution of the filter; `v_star` is written separately.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct SafenavFilterResult {
    pub omega: f64,
    pub lambda: f64,
    pub mu_star: f64,
    pub active: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> SafenavStatus {
    match e {
        Error::Usage(_) => SafenavStatus::InvalidArgument,
        Error::Parse { .. } => SafenavStatus::Parse,
        Error::Io { .. } | Error::Csv(_) => SafenavStatus::Io,
        Error::SimulationFault(_) => SafenavStatus::Simulation,
    }
}

/// Runs `f`, recording its error or panic for `safenav_last_error`.
fn guard(f: impl FnOnce() -> Result<(), (SafenavStatus, String)>) -> SafenavStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SafenavStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SafenavStatus::Panic
        }
    }
}

fn core(e: Error) -> (SafenavStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SafenavStatus, String) {
    (SafenavStatus::NullPointer, format!("{what} is null"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (SafenavStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (SafenavStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn read_slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], (SafenavStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn safenav_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Opens a scenario file or bundled scenario name.
///
/// # Safety
/// `reference` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn safenav_scenario_open(
    reference: *const c_char,
    out: *mut *mut SafenavScenario,
) -> SafenavStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let reference = read_str(reference, "reference")?;
        let source = ScenarioSource::open(reference).map_err(core)?;
        *out = Box::into_raw(Box::new(SafenavScenario { source }));
        Ok(())
    })
}

/// Applies one `key=value` override, as `--set` does on the command line.
///
/// # Safety
/// `scenario` must come from `safenav_scenario_open`; `assignment` must be a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn safenav_scenario_set(
    scenario: *mut SafenavScenario,
    assignment: *const c_char,
) -> SafenavStatus {
    guard(|| {
        let s = scenario.as_mut().ok_or_else(|| null("scenario"))?;
        let assignment = read_str(assignment, "assignment")?;
        s.source.config.apply_override(assignment).map_err(core)
    })
}

/// # Safety
/// `scenario` must be NULL or come from `safenav_scenario_open`, and must not
/// be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn safenav_scenario_free(scenario: *mut SafenavScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Simulates a scenario to completion. A crash inside the simulation is a
/// successful call; inspect the summary.
///
/// # Safety
/// `scenario` must come from `safenav_scenario_open`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn safenav_run(scenario: *const SafenavScenario, out: *mut *mut SafenavRun) -> SafenavStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        s.source.config.validate().map_err(core)?;
        let outcome = run_source(&s.source, &RunOptions::default()).map_err(core)?;
        *out = Box::into_raw(Box::new(SafenavRun { outcome }));
        Ok(())
    })
}

/// # Safety
/// `run` must be NULL or come from `safenav_run`, and must not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn safenav_run_free(run: *mut SafenavRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of logged control steps; 0 for a NULL handle.
///
/// # Safety
/// `run` must be NULL or come from `safenav_run`.
#[no_mangle]
pub unsafe extern "C" fn safenav_run_len(run: *const SafenavRun) -> usize {
    run.as_ref().map_or(0, |r| r.outcome.log.len())
}

/// # Safety
/// `run` must come from `safenav_run`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn safenav_run_record(
    run: *const SafenavRun,
    index: usize,
    out: *mut SafenavRecord,
) -> SafenavStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let rec = r.outcome.log.records.get(index).ok_or_else(|| {
            (
                SafenavStatus::OutOfRange,
                format!("record {index} of {}", r.outcome.log.len()),
            )
        })?;
        *out = SafenavRecord {
            t: rec.t,
            qx: rec.qx,
            qy: rec.qy,
            v: rec.v,
            theta: rec.theta,
            u1: rec.u1,
            u2: rec.u2,
            v_star1: rec.v_star1,
            v_star2: rec.v_star2,
            h: rec.h,
            psi0: rec.psi0,
            min_xi: rec.min_xi,
            min_phi: rec.min_phi,
            omega: rec.omega,
            lambda: rec.lambda,
            active: rec.active,
            k: rec.k,
        };
        Ok(())
    })
}

/// # Safety
/// `run` must come from `safenav_run`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn safenav_run_summary(run: *const SafenavRun, out: *mut SafenavSummary) -> SafenavStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let rep = &r.outcome.report;
        *out = SafenavSummary {
            reached: rep.reached,
            crashed: rep.crash.is_some(),
            audit_passed: rep.audit.passed(),
            time_to_goal: rep.time_to_goal.unwrap_or(f64::NAN),
            final_time: rep.final_time,
            final_distance: rep.final_distance,
            min_h: rep.min_h,
            min_psi0: rep.min_psi0,
            max_abs_v: rep.max_abs_v,
            steps: rep.steps,
            exit_code: exit_code_for_outcome(&r.outcome),
        };
        Ok(())
    })
}

/// Writes the trajectory CSV, with the same columns as the command-line tool.
///
/// # Safety
/// `run` must come from `safenav_run`; `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn safenav_run_write_csv(run: *const SafenavRun, path: *const c_char) -> SafenavStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(|| null("run"))?;
        let path = read_str(path, "path")?;
        r.outcome.log.save_csv(Path::new(path)).map_err(core)
    })
}

/// Log-sum-exp soft minimum of `n` values.
///
/// # Safety
/// `z` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn safenav_softmin(z: *const f64, n: usize, kappa: f64, out: *mut f64) -> SafenavStatus {
    guard(|| {
        let z = read_slice(z, n, "z")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = smooth_math::softmin(z, kappa).map_err(core)?;
        Ok(())
    })
}

/// Log-sum-exp soft maximum of `n` values.
///
/// # Safety
/// `z` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn safenav_softmax(z: *const f64, n: usize, kappa: f64, out: *mut f64) -> SafenavStatus {
    guard(|| {
        let z = read_slice(z, n, "z")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = smooth_math::softmax(z, kappa).map_err(core)?;
        Ok(())
    })
}

/// Smooth step of order `r` and rate `nu`: 0 for `t ≤ 0`, 1 for `t ≥ 1/nu`.
#[no_mangle]
pub extern "C" fn safenav_smoothstep(t: f64, r: u32, nu: f64) -> f64 {
    smooth_math::smoothstep_eta(t, r, nu)
}

/// Closed-form safety filter for one step. `lg_h`, `v_d` and `v_star` hold
/// `m` doubles each.
///
/// # Safety
/// The array pointers must be valid for `m` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn safenav_solve_filter(
    h: f64,
    dh_dt: f64,
    lf_h: f64,
    lg_h: *const f64,
    v_d: *const f64,
    m: usize,
    params: SafenavFilterParams,
    v_star: *mut f64,
    out: *mut SafenavFilterResult,
) -> SafenavStatus {
    guard(|| {
        let lg = read_slice(lg_h, m, "lg_h")?;
        let vd = read_slice(v_d, m, "v_d")?;
        if m > 0 && v_star.is_null() {
            return Err(null("v_star"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let eval = BarrierEvaluation::from_parts(h, dh_dt, lf_h, lg.to_vec());
        let config = FilterConfig {
            gamma: params.gamma,
            alpha: params.alpha,
            ..FilterConfig::default()
        };
        let d = solve_filter(&eval, vd, &config).map_err(core)?;
        if m > 0 {
            std::slice::from_raw_parts_mut(v_star, m).copy_from_slice(&d.v_star);
        }
        *out = SafenavFilterResult {
            omega: d.omega,
            lambda: d.lambda,
            mu_star: d.mu_star,
            active: d.active,
        };
        Ok(())
    })
}
