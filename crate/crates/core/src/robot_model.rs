//! Nonholonomic unicycle with acceleration and turn-rate inputs, and a
//! goal-seeking desired control that ignores obstacles.
//!
//! State `x = (qx, qy, v, θ)`, input `u = (u1, u2)` with
//! `ẋ = (v cos θ, v sin θ, u1, u2)`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smooth_math::{Jet, Real};

pub const STATE_DIM: usize = 4;
pub const INPUT_DIM: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub qx: f64,
    pub qy: f64,
    pub v: f64,
    /// Heading, kept unwrapped.
    pub theta: f64,
}

impl RobotState {
    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.qx, self.qy, self.v, self.theta]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self {
            qx: x[0],
            qy: x[1],
            v: x[2],
            theta: x[3],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalSpec {
    pub position: [f64; 2],
    /// Below this distance the desired control only brakes.
    #[serde(default = "default_arrival_tolerance")]
    pub arrival_tolerance: f64,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_k2")]
    pub k2: f64,
    #[serde(default = "default_k3")]
    pub k3: f64,
}

fn default_arrival_tolerance() -> f64 {
    0.1
}
fn default_k1() -> f64 {
    0.2
}
fn default_k2() -> f64 {
    1.0
}
fn default_k3() -> f64 {
    2.0
}

impl GoalSpec {
    pub fn new(position: [f64; 2]) -> Self {
        Self {
            position,
            arrival_tolerance: default_arrival_tolerance(),
            k1: default_k1(),
            k2: default_k2(),
            k3: default_k3(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.position.iter().all(|p| p.is_finite()) {
            return Err(Error::usage("goal.position must be finite"));
        }
        if !(self.arrival_tolerance > 0.0) {
            return Err(Error::usage("goal.arrival_tolerance must be positive"));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.k3 > 0.0) {
            return Err(Error::usage("goal gains k1, k2, k3 must be positive"));
        }
        Ok(())
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        (x[0] - self.position[0]).hypot(x[1] - self.position[1])
    }
}

/// `f(x) = (v cos θ, v sin θ, 0, 0)`.
pub fn drift<T: Real>(x: &[T]) -> [T; STATE_DIM] {
    let (s, c) = x[3].sin_cos();
    [x[2] * c, x[2] * s, T::cst(0.0), T::cst(0.0)]
}

/// `g(x)`: `u1` drives `v̇`, `u2` drives `θ̇`.
pub fn input_matrix() -> [[f64; INPUT_DIM]; STATE_DIM] {
    [[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]
}

/// `f(x) + g(x) u`.
pub fn dynamics<T: Real>(x: &[T], u: &[T]) -> [T; STATE_DIM] {
    let mut dx = drift(x);
    dx[2] += u[0];
    dx[3] += u[1];
    dx
}

/// Bearing error `δ = atan2(qy - gy, qx - gx) - θ + π`, shifted into `(-π, π]`.
pub fn heading_error<T: Real>(x: &[T], goal: &GoalSpec) -> T {
    let dx = x[0].add_f(-goal.position[0]);
    let dy = x[1].add_f(-goal.position[1]);
    let raw = dy.atan2(dx) - x[3] + T::cst(PI);
    let turns = ((raw.value() + PI) / TAU).ceil() - 1.0;
    raw.add_f(-TAU * turns)
}

/// Goal-seeking control. Inside the arrival tolerance it brakes with
/// `(-k3 v, 0)` instead of evaluating the `1/‖q - q_g‖` term.
pub fn desired_control<T: Real>(x: &[T], goal: &GoalSpec) -> [T; INPUT_DIM] {
    let dx = x[0].add_f(-goal.position[0]);
    let dy = x[1].add_f(-goal.position[1]);
    let v = x[2];
    if dx.value().hypot(dy.value()) <= goal.arrival_tolerance {
        return [v.scale(-goal.k3), T::cst(0.0)];
    }
    let (k1, k2, k3) = (goal.k1, goal.k2, goal.k3);
    let rho = (dx * dx + dy * dy).sqrt();
    let (s, c) = heading_error(x, goal).sin_cos();
    let u1 = v.scale(-(k1 + k3)) + (rho * c).scale(1.0 + k1 * k3) + (rho.scale(k2) + v).scale(k1) * s * s;
    let u2 = (v / rho).add_f(k2) * s;
    [u1, u2]
}

/// Directional derivative `(∂u_d/∂x) ẋ` of the desired control.
pub fn desired_control_rate(x: &[f64], xdot: &[f64], goal: &GoalSpec) -> [f64; INPUT_DIM] {
    let seeded: Vec<Jet<f64, 2>> = x.iter().zip(xdot).map(|(&a, &b)| Jet::new([a, b])).collect();
    let ud = desired_control(&seeded, goal);
    [ud[0].c[1], ud[1].c[1]]
}

/// Speed and input bounds of the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotLimits {
    /// `|v| ≤ speed`.
    pub speed: f64,
    /// `|u1| ≤ accel`.
    pub accel: f64,
    /// `|u2| ≤ turn_rate`.
    pub turn_rate: f64,
}

impl Default for RobotLimits {
    fn default() -> Self {
        Self {
            speed: 3.0,
            accel: 6.0,
            turn_rate: 4.0,
        }
    }
}

impl RobotLimits {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed > 0.0 && self.accel > 0.0 && self.turn_rate > 0.0) {
            return Err(Error::usage("limits must be positive"));
        }
        Ok(())
    }
}

/// A control-affine plant whose state starts with a planar position, with
/// state constraints `ξ_j(x) ≥ 0` and input constraints `φ_j(u) ≥ 0`.
pub trait CascadeModel {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// `f(x) + g(x) u`.
    fn dynamics<T: Real>(&self, x: &[T], u: &[T]) -> Vec<T>;
    fn drift<T: Real>(&self, x: &[T]) -> Vec<T>;
    fn position<T: Real>(&self, x: &[T]) -> [T; 2];
    fn state_constraints<T: Real>(&self, x: &[T]) -> Vec<T>;
    fn input_constraints<T: Real>(&self, u: &[T]) -> Vec<T>;
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UnicycleModel {
    pub limits: RobotLimits,
}

impl CascadeModel for UnicycleModel {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn dynamics<T: Real>(&self, x: &[T], u: &[T]) -> Vec<T> {
        dynamics(x, u).to_vec()
    }

    fn drift<T: Real>(&self, x: &[T]) -> Vec<T> {
        drift(x).to_vec()
    }

    fn position<T: Real>(&self, x: &[T]) -> [T; 2] {
        [x[0], x[1]]
    }

    /// `(v̄ - v, v + v̄)`.
    fn state_constraints<T: Real>(&self, x: &[T]) -> Vec<T> {
        let s = self.limits.speed;
        vec![T::cst(s) - x[2], x[2].add_f(s)]
    }

    /// `(ū1 - u1, u1 + ū1, ū2 - u2, u2 + ū2)`.
    fn input_constraints<T: Real>(&self, u: &[T]) -> Vec<T> {
        let (a, w) = (self.limits.accel, self.limits.turn_rate);
        vec![T::cst(a) - u[0], u[0].add_f(a), T::cst(w) - u[1], u[1].add_f(w)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOAL: [f64; 2] = [6.0, 2.5];

    #[test]
    fn drift_examples() {
        assert_eq!(drift(&[1.0, 2.0, 0.0, 0.3]), [0.0; 4]);
        assert_eq!(drift(&[0.0, 0.0, 1.0, 0.0]), [1.0, 0.0, 0.0, 0.0]);
        let d = drift(&[0.0, 0.0, 2.0, PI / 2.0]);
        assert!(d[0].abs() < 1e-15 && (d[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn input_matrix_product() {
        let g = input_matrix();
        let u = [0.7, -1.3];
        let gu: Vec<f64> = g.iter().map(|row| row[0] * u[0] + row[1] * u[1]).collect();
        assert_eq!(gu, vec![0.0, 0.0, 0.7, -1.3]);
    }

    /// Robot at distance `rho` from the goal, facing it.
    fn facing(rho: f64, v: f64) -> [f64; 4] {
        [GOAL[0] - rho, GOAL[1], v, 0.0]
    }

    #[test]
    fn aligned_robot_does_not_turn() {
        let goal = GoalSpec::new(GOAL);
        let ud = desired_control(&facing(3.0, 0.0), &goal);
        assert!((ud[0] - 1.4 * 3.0).abs() < 1e-12);
        assert!(ud[1].abs() < 1e-12);
        for v in [-1.0, 0.5, 2.0] {
            assert!(desired_control(&facing(3.0, v), &goal)[1].abs() < 1e-12);
        }
    }

    #[test]
    fn spec_plug_in_value() {
        let ud = desired_control(&facing(2.0, 1.0), &GoalSpec::new(GOAL));
        assert!((ud[0] - 0.6).abs() < 1e-12, "{}", ud[0]);
    }

    #[test]
    fn matches_printed_expression() {
        let goal = GoalSpec::new([-5.0, 7.0]);
        let x = [-1.0, -8.0, 0.8, 2.0];
        let rho = ((x[0] + 5.0f64).powi(2) + (x[1] - 7.0f64).powi(2)).sqrt();
        let delta = (x[1] - 7.0).atan2(x[0] + 5.0) - x[3] + PI;
        let u1 = -(0.2 + 2.0) * x[2] + (1.0 + 0.4) * rho * delta.cos() + 0.2 * (rho + x[2]) * delta.sin().powi(2);
        let u2 = (1.0 + x[2] / rho) * delta.sin();
        let ud = desired_control(&x, &goal);
        assert!((ud[0] - u1).abs() < 1e-12 && (ud[1] - u2).abs() < 1e-12);
    }

    #[test]
    fn invariant_under_full_turns() {
        let goal = GoalSpec::new(GOAL);
        let x = [-1.0, -8.0, 0.4, 1.1];
        let a = desired_control(&x, &goal);
        for k in [-3.0, -1.0, 1.0, 5.0] {
            let y = [x[0], x[1], x[2], x[3] + k * TAU];
            let b = desired_control(&y, &goal);
            assert!((a[0] - b[0]).abs() < 1e-10 && (a[1] - b[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn heading_error_range() {
        let goal = GoalSpec::new(GOAL);
        for i in -40..40 {
            let x = [0.0, 0.0, 0.0, 0.37 * i as f64];
            let d = heading_error(&x, &goal);
            assert!(d > -PI && d <= PI, "{d}");
        }
    }

    #[test]
    fn brakes_inside_tolerance() {
        let goal = GoalSpec::new(GOAL);
        let ud = desired_control(&[GOAL[0] + 0.05, GOAL[1], 1.5, 0.2], &goal);
        assert_eq!(ud, [-3.0, 0.0]);
    }

    #[test]
    fn rate_matches_finite_difference() {
        let goal = GoalSpec::new(GOAL);
        let x = [-1.0, -8.0, 1.2, 0.9];
        let xdot = dynamics(&x, &[0.5, -0.3]);
        let rate = desired_control_rate(&x, &xdot, &goal);
        let h = 1e-6;
        let at = |s: f64| {
            let y: Vec<f64> = x.iter().zip(&xdot).map(|(a, b)| a + s * b).collect();
            desired_control(&y, &goal)
        };
        let (p, m) = (at(h), at(-h));
        for i in 0..2 {
            let fd = (p[i] - m[i]) / (2.0 * h);
            assert!(
                (rate[i] - fd).abs() < 1e-6 * fd.abs().max(1.0),
                "{i}: {} vs {fd}",
                rate[i]
            );
        }
    }

    #[test]
    fn unicycle_constraints() {
        let m = UnicycleModel::default();
        assert_eq!(m.state_constraints(&[0.0, 0.0, 0.0, 0.0]), vec![3.0, 3.0]);
        assert_eq!(m.input_constraints(&[0.0, 0.0]), vec![6.0, 6.0, 4.0, 4.0]);
        assert_eq!(m.input_constraints(&[6.0, 0.0])[0], 0.0);
        assert_eq!(m.input_constraints(&[7.0, 0.0])[0], -1.0);
    }
}
