//! Sampled-data closed loop: a scan every `T` seconds, a filter update at the
//! control rate with zero-order hold on `v*`, and RK4 on the joint
//! `(x, u)` dynamics between updates.

pub mod scenario;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use serde::Serialize;

use crate::cbf_composer::{BarrierComposer, CascadeState};
use crate::environment::{cast_scan, ObstacleMap, Point};
use crate::error::{Error, Result};
use crate::perception_barrier::{build_frame, write_frame_dump, BarrierBuffer};
use crate::robot_model::{self, CascadeModel, UnicycleModel};
use crate::safety_filter::{desired_surrogate, solve_filter, UdRate};

pub use scenario::{ScenarioConfig, ScenarioSource, BUILTIN_SCENARIOS};

/// One control step. Serializes to the trajectory CSV columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub qx: f64,
    pub qy: f64,
    pub v: f64,
    pub theta: f64,
    pub u1: f64,
    pub u2: f64,
    pub v_star1: f64,
    pub v_star2: f64,
    pub v_d1: f64,
    pub v_d2: f64,
    pub u_d1: f64,
    pub u_d2: f64,
    pub h: f64,
    pub psi0: f64,
    pub min_xi: f64,
    pub min_phi: f64,
    pub omega: f64,
    pub lambda: f64,
    pub active: bool,
    pub k: u64,
    /// `ξ_{j,0}` for each `j`.
    #[serde(skip)]
    pub xi: Vec<f64>,
    /// `φ_j` for each `j`.
    #[serde(skip)]
    pub phi: Vec<f64>,
    /// Smallest argument of the soft minimum defining `h`.
    #[serde(skip)]
    pub min_composed: f64,
    #[serde(skip)]
    pub lg_degenerate: bool,
}

pub const CSV_COLUMNS: &[&str] = &[
    "t", "qx", "qy", "v", "theta", "u1", "u2", "v_star1", "v_star2", "v_d1", "v_d2", "u_d1", "u_d2", "h", "psi0",
    "min_xi", "min_phi", "omega", "lambda", "active", "k",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub records: Vec<TrajectoryRecord>,
}

impl TrajectoryLog {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if self.records.is_empty() {
            w.write_record(CSV_COLUMNS)?;
        }
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    GoalReached,
    Horizon,
    Crash,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrashInfo {
    pub step: usize,
    pub t: f64,
    pub position: [f64; 2],
    pub message: String,
}

/// Post-run checks on the log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SafetyAudit {
    pub tolerance: f64,
    /// Records with `h ≥ 0` but some composed component negative.
    pub containment_violations: usize,
    /// Names of the logged barriers whose minimum fell below `-tolerance`.
    pub invariance_violations: Vec<String>,
}

impl SafetyAudit {
    pub fn passed(&self) -> bool {
        self.containment_violations == 0 && self.invariance_violations.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TerminationReport {
    pub scenario: String,
    pub reason: TerminationReason,
    pub reached: bool,
    pub time_to_goal: Option<f64>,
    pub final_time: f64,
    pub final_state: Vec<f64>,
    pub final_distance: f64,
    pub steps: usize,
    pub frames: u64,
    pub initial_membership_ok: bool,
    pub min_h: f64,
    pub min_psi0: f64,
    pub min_xi: Vec<f64>,
    pub min_phi: Vec<f64>,
    pub max_abs_u1: f64,
    pub max_abs_u2: f64,
    pub max_abs_v: f64,
    pub active_fraction: f64,
    /// Scans whose safe region did not overlap any buffered one on the grid.
    pub overlap_warnings: usize,
    /// Active filter steps with a vanishing `L_g̃h`.
    pub lg_degenerate_steps: usize,
    pub audit: SafetyAudit,
    pub crash: Option<CrashInfo>,
    pub wall_time_s: f64,
}

impl TerminationReport {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub log: TrajectoryLog,
    pub report: TerminationReport,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions<'a> {
    /// Write one CSV per perception frame plus `index.csv` here.
    pub frames_dir: Option<&'a Path>,
}

/// One classical Runge-Kutta step of `ż = field(t, z)`.
pub fn integrate_rk4<F>(field: F, state: &[f64], t: f64, dt: f64) -> Result<Vec<f64>>
where
    F: Fn(f64, &[f64]) -> Vec<f64>,
{
    if !(dt > 0.0) {
        return Err(Error::usage("integration step must be positive"));
    }
    let axpy = |a: f64, k: &[f64]| -> Vec<f64> { state.iter().zip(k).map(|(s, k)| s + a * k).collect() };
    let k1 = field(t, state);
    let k2 = field(t + dt / 2.0, &axpy(dt / 2.0, &k1));
    let k3 = field(t + dt / 2.0, &axpy(dt / 2.0, &k2));
    let k4 = field(t + dt, &axpy(dt, &k3));
    let next: Vec<f64> = (0..state.len())
        .map(|i| state[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(Error::SimulationFault(format!(
            "non-finite state after RK4 step at t = {t}"
        )))
    }
}

/// Runs a scenario against an already loaded map.
pub fn run_scenario(config: &ScenarioConfig, map: &ObstacleMap, options: &RunOptions) -> Result<RunOutcome> {
    config.validate()?;
    let started = Instant::now();
    let model = UnicycleModel { limits: config.limits };
    let dynamics = config.dynamics.build()?;
    let composer = BarrierComposer::new(model, dynamics.clone(), config.chain.clone(), config.sharpness.epsilon)?;
    let goal = config.goal;
    let eta_order = config.chain.r() as u32;
    let dt = config.control_period();
    let spf = config.steps_per_frame();
    let n_steps = (config.horizon * config.control_rate + 1e-9).floor() as usize;

    if let Some(dir) = options.frames_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut frame_index = Vec::new();

    let mut x = config.initial.x.clone();
    let mut u = config.initial.u.clone();
    let mut buffer: Option<BarrierBuffer> = None;
    let mut log = TrajectoryLog::default();
    let mut overlap_warnings = 0;
    let mut initial_membership_ok = true;
    let mut time_to_goal = None;
    let mut crash = None;
    let mut reason = TerminationReason::Horizon;
    let mut t = 0.0;

    for step in 0..=n_steps {
        t = step as f64 * dt;
        let position = Point::new(x[0], x[1]);
        if !x.iter().chain(&u).all(|v| v.is_finite()) {
            reason = TerminationReason::NonFinite;
            break;
        }
        if let Err(e) = map.check_free(position) {
            crash = Some(CrashInfo {
                step,
                t,
                position: [x[0], x[1]],
                message: e.to_string(),
            });
            reason = TerminationReason::Crash;
            break;
        }

        if step % spf == 0 {
            let k = (step / spf) as u64;
            let scan = cast_scan(map, position, &config.lidar)?;
            let frame = build_frame(&scan, k, &config.perception, config.sharpness.rho);
            if let Some(dir) = options.frames_dir {
                let name = format!("frame_{k:05}.csv");
                write_frame_dump(&dir.join(&name), &frame, t)?;
                frame_index.push((k, t, x[0], x[1], frame.detections(), name));
            }
            match buffer.as_mut() {
                None => {
                    buffer = Some(BarrierBuffer::new(
                        frame,
                        config.perception.window,
                        config.perception_period,
                        config.sharpness.kappa,
                        eta_order,
                        config.perception.nu,
                    )?)
                }
                Some(b) => {
                    b.push(frame)?;
                    if !b.newest_overlaps_history(config.audit.overlap_grid) {
                        overlap_warnings += 1;
                        warn!("scan {k}: safe region does not overlap the buffered ones");
                    }
                }
            }
        }
        let buffer = buffer.as_ref().expect("first scan happens at step 0");

        let state = CascadeState::new(t, x.clone(), u.clone());
        if step == 0 {
            let report = composer.check_membership(buffer, &state)?;
            initial_membership_ok = report.all_nonnegative();
            if !initial_membership_ok {
                let names: Vec<&str> = report.negatives().map(|e| e.name.as_str()).collect();
                warn!("initial state violates {}", names.join(", "));
            }
        }
        let eval = composer.eval_h(buffer, &state)?;
        let u_d = robot_model::desired_control(&x, &goal);
        let xdot = match config.filter.ud_rate {
            UdRate::FullFlow => composer.model.dynamics(&x, &u),
            UdRate::DriftOnly => composer.model.drift(&x),
        };
        let u_d_rate = robot_model::desired_control_rate(&x, &xdot, &goal);
        let v_d = desired_surrogate(&dynamics, &u, &u_d, &u_d_rate, config.filter.sigma)?;
        let decision = solve_filter(&eval, &v_d, &config.filter)?;

        let c = &eval.components;
        log.records.push(TrajectoryRecord {
            t,
            qx: x[0],
            qy: x[1],
            v: x[2],
            theta: x[3],
            u1: u[0],
            u2: u[1],
            v_star1: decision.v_star[0],
            v_star2: decision.v_star[1],
            v_d1: v_d[0],
            v_d2: v_d[1],
            u_d1: u_d[0],
            u_d2: u_d[1],
            h: eval.h,
            psi0: c.psi0(),
            min_xi: c.min_xi(),
            min_phi: c.min_phi(),
            omega: decision.omega,
            lambda: decision.lambda,
            active: decision.active,
            k: buffer.newest_index(),
            xi: c.xi.iter().map(|s| s[0]).collect(),
            phi: c.phi.clone(),
            min_composed: c.composed().into_iter().fold(f64::INFINITY, f64::min),
            lg_degenerate: decision.lg_degenerate,
        });

        if goal.distance(&x) < config.reach_radius && time_to_goal.is_none() {
            time_to_goal = Some(t);
            info!("goal reached at t = {t:.2} s");
            if config.stop_on_arrival {
                reason = TerminationReason::GoalReached;
                break;
            }
        }
        if step == n_steps {
            break;
        }

        let v_star = decision.v_star;
        let n = x.len();
        let sub = dt / config.substeps as f64;
        let mut z: Vec<f64> = x.iter().chain(&u).copied().collect();
        for s in 0..config.substeps {
            let field = |_t: f64, z: &[f64]| -> Vec<f64> {
                let (zx, zu) = z.split_at(n);
                let mut out = composer.model.dynamics(zx, zu);
                out.extend(dynamics.rate(zu, &v_star));
                out
            };
            z = match integrate_rk4(field, &z, t + s as f64 * sub, sub) {
                Ok(z) => z,
                Err(_) => {
                    reason = TerminationReason::NonFinite;
                    break;
                }
            };
        }
        if reason == TerminationReason::NonFinite {
            break;
        }
        x = z[..n].to_vec();
        u = z[n..].to_vec();
    }

    if let Some(dir) = options.frames_dir {
        let path = dir.join("index.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["k", "t", "origin_x", "origin_y", "detections", "file"])?;
        for (k, t, ox, oy, n, name) in &frame_index {
            w.write_record([
                k.to_string(),
                t.to_string(),
                ox.to_string(),
                oy.to_string(),
                n.to_string(),
                name.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
    }

    let frames = buffer.as_ref().map_or(0, |b| b.newest_index() + 1);
    let report = summarize(
        config,
        &log,
        Summary {
            reason,
            time_to_goal,
            final_time: t,
            final_state: x.iter().chain(&u).copied().collect(),
            frames,
            initial_membership_ok,
            overlap_warnings,
            crash,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    );
    Ok(RunOutcome { log, report })
}

struct Summary {
    reason: TerminationReason,
    time_to_goal: Option<f64>,
    final_time: f64,
    final_state: Vec<f64>,
    frames: u64,
    initial_membership_ok: bool,
    overlap_warnings: usize,
    crash: Option<CrashInfo>,
    wall_time_s: f64,
}

fn summarize(config: &ScenarioConfig, log: &TrajectoryLog, s: Summary) -> TerminationReport {
    let recs = &log.records;
    let min = |f: &dyn Fn(&TrajectoryRecord) -> f64| recs.iter().map(f).fold(f64::INFINITY, f64::min);
    let max_abs = |f: &dyn Fn(&TrajectoryRecord) -> f64| recs.iter().map(|r| f(r).abs()).fold(0.0, f64::max);
    let width = |f: &dyn Fn(&TrajectoryRecord) -> usize| recs.first().map_or(0, f);
    let min_xi: Vec<f64> = (0..width(&|r| r.xi.len())).map(|j| min(&|r| r.xi[j])).collect();
    let min_phi: Vec<f64> = (0..width(&|r| r.phi.len())).map(|j| min(&|r| r.phi[j])).collect();
    let min_h = min(&|r| r.h);
    let min_psi0 = min(&|r| r.psi0);

    let tol = config.audit.tolerance;
    let mut invariance_violations = Vec::new();
    let mut check = |name: String, v: f64| {
        if v < -tol {
            invariance_violations.push(name);
        }
    };
    check("h".into(), min_h);
    check("psi0".into(), min_psi0);
    for (j, &v) in min_xi.iter().enumerate() {
        check(format!("xi_{}", j + 1), v);
    }
    for (j, &v) in min_phi.iter().enumerate() {
        check(format!("phi_{}", j + 1), v);
    }
    let audit = SafetyAudit {
        tolerance: tol,
        containment_violations: recs.iter().filter(|r| r.h >= 0.0 && r.min_composed < 0.0).count(),
        invariance_violations,
    };

    let n = recs.len().max(1) as f64;
    let final_distance = config.goal.distance(&s.final_state);
    TerminationReport {
        scenario: config.name.clone(),
        reason: s.reason,
        reached: s.time_to_goal.is_some(),
        time_to_goal: s.time_to_goal,
        final_time: s.final_time,
        final_state: s.final_state,
        final_distance,
        steps: recs.len(),
        frames: s.frames,
        initial_membership_ok: s.initial_membership_ok,
        min_h,
        min_psi0,
        min_xi,
        min_phi,
        max_abs_u1: max_abs(&|r| r.u1),
        max_abs_u2: max_abs(&|r| r.u2),
        max_abs_v: max_abs(&|r| r.v),
        active_fraction: recs.iter().filter(|r| r.active).count() as f64 / n,
        overlap_warnings: s.overlap_warnings,
        lg_degenerate_steps: recs.iter().filter(|r| r.lg_degenerate).count(),
        audit,
        crash: s.crash,
        wall_time_s: s.wall_time_s,
    }
}

/// Loads the scenario's map and runs it.
pub fn run_source(source: &ScenarioSource, options: &RunOptions) -> Result<RunOutcome> {
    let (_, map) = source.config.resolve_map(&source.base_dir)?;
    run_scenario(&source.config, &map, options)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_identity_and_exponential() {
        let z = integrate_rk4(|_, z| vec![0.0; z.len()], &[1.0, -2.0], 0.0, 0.1).unwrap();
        assert_eq!(z, vec![1.0, -2.0]);
        let z = integrate_rk4(|_, z| z.to_vec(), &[1.0], 0.0, 0.01).unwrap();
        assert!((z[0] - 0.01f64.exp()).abs() < 1e-10);
    }

    #[test]
    fn rk4_fourth_order() {
        let err = |n: usize| {
            let dt = 1.0 / n as f64;
            let mut z = vec![1.0];
            for i in 0..n {
                z = integrate_rk4(|_, z| vec![-z[0]], &z, i as f64 * dt, dt).unwrap();
            }
            (z[0] - (-1.0f64).exp()).abs()
        };
        let ratio = err(10) / err(20);
        assert!((ratio.log2() - 4.0).abs() < 0.15, "observed order {}", ratio.log2());
    }

    #[test]
    fn rk4_rejects_blowup() {
        assert!(integrate_rk4(|_, _| vec![f64::INFINITY], &[0.0], 0.0, 0.1).is_err());
        assert!(integrate_rk4(|_, z| z.to_vec(), &[0.0], 0.0, 0.0).is_err());
    }
}
