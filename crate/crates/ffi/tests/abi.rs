use std::ffi::{CStr, CString};
use std::ptr;

use safenav_ffi::*;

fn last_error() -> String {
    let p = safenav_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn open(name: &str) -> *mut SafenavScenario {
    let name = CString::new(name).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(
        unsafe { safenav_scenario_open(name.as_ptr(), &mut s) },
        SafenavStatus::Ok
    );
    assert!(!s.is_null());
    s
}

#[test]
fn soft_extrema_match_the_core() {
    let z = [1.0, -2.0, 3.5];
    let mut out = 0.0;
    assert_eq!(
        unsafe { safenav_softmin(z.as_ptr(), 3, 10.0, &mut out) },
        SafenavStatus::Ok
    );
    assert_eq!(out, safenav::smooth_math::softmin(&z, 10.0).unwrap());
    assert_eq!(
        unsafe { safenav_softmax(z.as_ptr(), 3, 10.0, &mut out) },
        SafenavStatus::Ok
    );
    assert_eq!(out, safenav::smooth_math::softmax(&z, 10.0).unwrap());

    assert_eq!(
        unsafe { safenav_softmin(z.as_ptr(), 0, 10.0, &mut out) },
        SafenavStatus::InvalidArgument
    );
    assert!(!last_error().is_empty());
    assert_eq!(
        unsafe { safenav_softmin(ptr::null(), 3, 10.0, &mut out) },
        SafenavStatus::NullPointer
    );
    assert!(last_error().contains('z'));
}

#[test]
fn smoothstep_endpoints() {
    assert_eq!(safenav_smoothstep(-0.5, 2, 1.2), 0.0);
    assert_eq!(safenav_smoothstep(0.5 / 1.2, 2, 1.2), 0.5);
    assert_eq!(safenav_smoothstep(2.0, 2, 1.2), 1.0);
}

#[test]
fn filter_projects_onto_the_constraint() {
    // ω = 1 + 2 + (1·0 + 0·0) + 30·0.1 = 6 ≥ 0: inactive.
    let lg = [1.0, 0.0];
    let vd = [0.0, 0.0];
    let mut v = [f64::NAN; 2];
    let mut res = SafenavFilterResult::default();
    let params = SafenavFilterParams {
        gamma: 200.0,
        alpha: 30.0,
    };
    let st = unsafe {
        safenav_solve_filter(
            0.1,
            1.0,
            2.0,
            lg.as_ptr(),
            vd.as_ptr(),
            2,
            params,
            v.as_mut_ptr(),
            &mut res,
        )
    };
    assert_eq!(st, SafenavStatus::Ok);
    assert!(!res.active && res.lambda == 0.0);
    assert_eq!(v, vd);

    // ω = -10 + 0 + 0 + 0 with h = 0: λ = 10/‖L_g‖² = 10, v* = v_d + 10 L_g.
    let st = unsafe {
        safenav_solve_filter(
            0.0,
            -10.0,
            0.0,
            lg.as_ptr(),
            vd.as_ptr(),
            2,
            params,
            v.as_mut_ptr(),
            &mut res,
        )
    };
    assert_eq!(st, SafenavStatus::Ok);
    assert!(res.active);
    assert_eq!(res.omega, -10.0);
    assert_eq!(res.lambda, 10.0);
    assert_eq!(res.mu_star, 0.0);
    assert_eq!(v, [10.0, 0.0]);

    let bad = SafenavFilterParams {
        gamma: -1.0,
        alpha: 30.0,
    };
    let st = unsafe {
        safenav_solve_filter(
            0.0,
            -10.0,
            0.0,
            lg.as_ptr(),
            vd.as_ptr(),
            2,
            bad,
            v.as_mut_ptr(),
            &mut res,
        )
    };
    assert_eq!(st, SafenavStatus::InvalidArgument);
    assert!(last_error().contains("gamma"));
}

#[test]
fn scenario_run_and_records() {
    let s = open("tracking");
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { safenav_run(s, &mut run) }, SafenavStatus::Ok);
    let n = unsafe { safenav_run_len(run) };
    assert!(n > 10);

    let mut summary = SafenavSummary::default();
    assert_eq!(unsafe { safenav_run_summary(run, &mut summary) }, SafenavStatus::Ok);
    assert!(summary.reached && !summary.crashed && summary.audit_passed);
    assert_eq!(summary.exit_code, 0);
    assert_eq!(summary.steps, n);

    let mut first = SafenavRecord::default();
    let mut last = SafenavRecord::default();
    assert_eq!(unsafe { safenav_run_record(run, 0, &mut first) }, SafenavStatus::Ok);
    assert_eq!(unsafe { safenav_run_record(run, n - 1, &mut last) }, SafenavStatus::Ok);
    assert_eq!(first.t, 0.0);
    assert!((last.t - summary.time_to_goal).abs() < 1e-12);
    assert_eq!(
        unsafe { safenav_run_record(run, n, &mut last) },
        SafenavStatus::OutOfRange
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.csv");
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { safenav_run_write_csv(run, c_path.as_ptr()) },
        SafenavStatus::Ok
    );
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), n + 1);

    unsafe {
        safenav_run_free(run);
        safenav_scenario_free(s);
    }
}

#[test]
fn overrides_and_errors() {
    let s = open("paper_goal_a");
    let ok = CString::new("horizon=0.5").unwrap();
    let bad = CString::new("filter.nope=1").unwrap();
    assert_eq!(unsafe { safenav_scenario_set(s, ok.as_ptr()) }, SafenavStatus::Ok);
    assert_eq!(
        unsafe { safenav_scenario_set(s, bad.as_ptr()) },
        SafenavStatus::InvalidArgument
    );
    assert!(last_error().contains("filter.nope"));

    let mut run = ptr::null_mut();
    assert_eq!(unsafe { safenav_run(s, &mut run) }, SafenavStatus::Ok);
    let mut summary = SafenavSummary::default();
    unsafe { safenav_run_summary(run, &mut summary) };
    assert!(!summary.reached && summary.time_to_goal.is_nan());
    assert_eq!(summary.exit_code, 1);
    assert_eq!(summary.steps, 51);
    unsafe {
        safenav_run_free(run);
        safenav_scenario_free(s);
    }

    let missing = CString::new("/nonexistent/scenario.toml").unwrap();
    let mut s = ptr::null_mut();
    let st = unsafe { safenav_scenario_open(missing.as_ptr(), &mut s) };
    assert_ne!(st, SafenavStatus::Ok);
    assert!(s.is_null());
    assert!(last_error().contains("/nonexistent/scenario.toml"));

    assert_eq!(
        unsafe { safenav_run(ptr::null(), &mut run) },
        SafenavStatus::NullPointer
    );
    assert_eq!(unsafe { safenav_run_len(ptr::null()) }, 0);
    unsafe {
        safenav_run_free(ptr::null_mut());
        safenav_scenario_free(ptr::null_mut());
    }
}
