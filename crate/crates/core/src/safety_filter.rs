//! Control dynamics `u̇ = A_c u + B_c v` and the closed-form safety filter.
//!
//! The filter solves
//!
//! ```text
//! min_{v, μ}  ½‖v - v_d‖² + (γ/2) μ²
//! s.t.        ∂h/∂t + L_f̃h + L_g̃h v + α h + μ h ≥ 0
//! ```
//!
//! whose unique minimizer is `v* = v_d + λ L_g̃hᵀ`, `μ* = λ h / γ` with
//! `λ = max(0, -ω) / (‖L_g̃h‖² + h²/γ)` and `ω` the constraint at `(v_d, 0)`.

use log::debug;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbf_composer::BarrierEvaluation;
use crate::error::{Error, Result};
use crate::smooth_math::Real;

/// Below this `‖L_g̃h‖` an active filter has no control authority through `v`.
pub const LG_FLOOR: f64 = 1e-9;
/// Denominator clamp that keeps `λ` finite when both `L_g̃h` and `h` vanish.
pub const DENOMINATOR_FLOOR: f64 = 1e-18;

/// Stable LTI control dynamics with an invertible input matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    b_inv: DMatrix<f64>,
}

impl ControlDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let m = a.nrows();
        if m == 0 || a.ncols() != m || b.nrows() != m || b.ncols() != m {
            return Err(Error::usage("A_c and B_c must be square matrices of the same size"));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::usage("A_c and B_c must be finite"));
        }
        if let Some(ev) = a.complex_eigenvalues().iter().find(|ev| ev.re >= 0.0) {
            return Err(Error::usage(format!(
                "A_c is not asymptotically stable: eigenvalue {ev}"
            )));
        }
        let b_inv = b.clone().try_inverse().ok_or_else(|| Error::usage("B_c is singular"))?;
        let sv = b.singular_values();
        debug!("B_c condition number {:.3e}", sv.max() / sv.min());
        Ok(Self { a, b, b_inv })
    }

    /// Builds from row-major nested lists.
    pub fn from_rows(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Self> {
        let to_matrix = |rows: &[Vec<f64>], name: &str| -> Result<DMatrix<f64>> {
            let n = rows.len();
            if n == 0 || rows.iter().any(|r| r.len() != n) {
                return Err(Error::usage(format!("{name} must be a non-empty square matrix")));
            }
            Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
        };
        Self::new(to_matrix(a, "dynamics.a")?, to_matrix(b, "dynamics.b")?)
    }

    /// `A_c = -I₂`, `B_c = I₂`.
    pub fn standard() -> Self {
        Self::new(-DMatrix::identity(2, 2), DMatrix::identity(2, 2)).expect("valid default dynamics")
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b_matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn b_inverse(&self) -> &DMatrix<f64> {
        &self.b_inv
    }

    pub fn b(&self, i: usize, j: usize) -> f64 {
        self.b[(i, j)]
    }

    /// `A_c u` over any scalar type.
    pub fn drift<T: Real>(&self, u: &[T]) -> Vec<T> {
        (0..self.dim())
            .map(|i| {
                let mut acc = T::cst(0.0);
                for (j, &uj) in u.iter().enumerate() {
                    let aij = self.a[(i, j)];
                    if aij != 0.0 {
                        acc += uj.scale(aij);
                    }
                }
                acc
            })
            .collect()
    }

    /// `A_c u + B_c v`.
    pub fn rate(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let r = &self.a * DVector::from_column_slice(u) + &self.b * DVector::from_column_slice(v);
        r.as_slice().to_vec()
    }

    /// Row-major copies, for serialization.
    pub fn rows(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        (rows(&self.a), rows(&self.b))
    }
}

/// How the rate of the desired control enters `v_d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UdRate {
    /// `(∂u_d/∂x)(f(x) + g(x)u)`, the rate along the actual closed loop.
    #[default]
    FullFlow,
    /// `(∂u_d/∂x) f(x)` only.
    DriftOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    /// Weight `γ` of the slack `μ`.
    pub gamma: f64,
    /// Tracking gain `σ` of the desired surrogate control.
    pub sigma: f64,
    /// Slope of the linear class-K function on `h`.
    pub alpha: f64,
    pub ud_rate: UdRate,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            gamma: 200.0,
            sigma: 0.6,
            alpha: 30.0,
            ud_rate: UdRate::FullFlow,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("gamma", self.gamma), ("sigma", self.sigma), ("alpha", self.alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::usage(format!("filter.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// One evaluation of the safety filter.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterDecision {
    pub h: f64,
    pub dh_dt: f64,
    pub lf_h: f64,
    pub lg_h: Vec<f64>,
    pub omega: f64,
    pub lambda: f64,
    pub v_d: Vec<f64>,
    pub v_star: Vec<f64>,
    pub mu_star: f64,
    /// `ω < 0`.
    pub active: bool,
    /// Active with `‖L_g̃h‖` under [`LG_FLOOR`].
    pub lg_degenerate: bool,
}

/// `v_d = B_c⁻¹(u̇_d - A_c u + σ(u_d - u))`, under which `u - u_d` decays
/// at rate `σ`.
pub fn desired_surrogate(
    dynamics: &ControlDynamics,
    u: &[f64],
    u_d: &[f64],
    u_d_rate: &[f64],
    sigma: f64,
) -> Result<Vec<f64>> {
    let m = dynamics.dim();
    if u.len() != m || u_d.len() != m || u_d_rate.len() != m {
        return Err(Error::usage(format!("desired surrogate expects {m}-vectors")));
    }
    let au = dynamics.drift(u);
    let rhs = DVector::from_fn(m, |i, _| u_d_rate[i] - au[i] + sigma * (u_d[i] - u[i]));
    Ok((dynamics.b_inverse() * rhs).as_slice().to_vec())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `∂h/∂t + L_f̃h + L_g̃h v̂ + α h + μ̂ h`.
pub fn constraint_value(eval: &BarrierEvaluation, v_hat: &[f64], mu_hat: f64, alpha: f64) -> f64 {
    eval.dh_dt + eval.lf_h + dot(&eval.lg_h, v_hat) + alpha * eval.h + mu_hat * eval.h
}

/// `½‖v - v_d‖² + (γ/2) μ²`.
pub fn cost(v: &[f64], mu: f64, v_d: &[f64], gamma: f64) -> f64 {
    0.5 * v.iter().zip(v_d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + 0.5 * gamma * mu * mu
}

/// The closed-form minimizer.
pub fn solve_filter(eval: &BarrierEvaluation, v_d: &[f64], config: &FilterConfig) -> Result<FilterDecision> {
    if v_d.len() != eval.lg_h.len() {
        return Err(Error::usage(format!(
            "v_d has {} entries but L_g̃h has {}",
            v_d.len(),
            eval.lg_h.len()
        )));
    }
    if !(config.gamma > 0.0) {
        return Err(Error::usage("filter.gamma must be positive"));
    }
    let omega = constraint_value(eval, v_d, 0.0, config.alpha);
    let lg_sq = dot(&eval.lg_h, &eval.lg_h);
    let active = omega < 0.0;
    let lambda = if active {
        -omega / (lg_sq + eval.h * eval.h / config.gamma).max(DENOMINATOR_FLOOR)
    } else {
        0.0
    };
    Ok(FilterDecision {
        h: eval.h,
        dh_dt: eval.dh_dt,
        lf_h: eval.lf_h,
        lg_h: eval.lg_h.clone(),
        omega,
        lambda,
        v_d: v_d.to_vec(),
        v_star: v_d.iter().zip(&eval.lg_h).map(|(v, g)| v + lambda * g).collect(),
        mu_star: eval.h * lambda / config.gamma,
        active,
        lg_degenerate: active && lg_sq.sqrt() < LG_FLOOR,
    })
}

/// Advances `u` by `dt` under constant `v`, exactly, through the matrix
/// exponential of `[[A_c, B_c v], [0, 0]]`.
pub fn step_control(dynamics: &ControlDynamics, u: &[f64], v: &[f64], dt: f64) -> Result<Vec<f64>> {
    let m = dynamics.dim();
    if !(dt > 0.0) {
        return Err(Error::usage("dt must be positive"));
    }
    if u.len() != m || v.len() != m {
        return Err(Error::usage(format!("step_control expects {m}-vectors")));
    }
    let bv = dynamics.b_matrix() * DVector::from_column_slice(v);
    let mut aug = DMatrix::zeros(m + 1, m + 1);
    aug.view_mut((0, 0), (m, m)).copy_from(dynamics.a());
    aug.view_mut((0, m), (m, 1)).copy_from(&bv);
    let e = (aug * dt).exp();
    let mut z = DVector::zeros(m + 1);
    z.rows_mut(0, m).copy_from_slice(u);
    z[m] = 1.0;
    let next = e * z;
    Ok(next.rows(0, m).iter().copied().collect())
}

/// Outcome of checking a filter decision against random feasible points
/// and the optimality conditions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub samples: usize,
    /// Samples satisfying the constraint.
    pub feasible: usize,
    /// Feasible samples with strictly lower cost than the candidate.
    pub violations: usize,
    /// First offending `(v, μ)`, if any.
    pub first_violation: Option<(Vec<f64>, f64)>,
    /// `‖(v* - v_d) - λ L_g̃hᵀ‖ + |γ μ* - λ h|`.
    pub kkt_residual: f64,
    /// `|λ b(v*, μ*)|`.
    pub slackness: f64,
    /// `b(v*, μ*)`.
    pub constraint_at_candidate: f64,
    pub lambda: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
            && self.kkt_residual < 1e-9
            && self.slackness < 1e-9 * scale(self.lambda)
            && self.constraint_at_candidate >= -1e-9
            && self.lambda >= 0.0
    }
}

fn scale(v: f64) -> f64 {
    v.abs().max(1.0)
}

/// Checks `candidate` against random `(v, μ)` drawn from two boxes around it,
/// one wide and one tight, and against the stationarity and complementary
/// slackness conditions.
pub fn check_candidate(
    eval: &BarrierEvaluation,
    v_d: &[f64],
    config: &FilterConfig,
    candidate: &FilterDecision,
    samples: usize,
    seed: u64,
) -> Result<OracleReport> {
    if samples == 0 {
        return Err(Error::usage("the oracle needs at least one sample"));
    }
    let m = v_d.len();
    let v_star = &candidate.v_star;
    let mu_star = candidate.mu_star;
    let j_star = cost(v_star, mu_star, v_d, config.gamma);
    let wide = 1.0 + v_star.iter().zip(v_d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) + mu_star.abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut feasible = 0;
    let mut violations = 0;
    let mut first_violation = None;
    let mut v = vec![0.0; m];
    for k in 0..samples {
        let width = if k % 2 == 0 { wide } else { 1e-3 * wide };
        for i in 0..m {
            v[i] = v_star[i] + width * rng.random_range(-1.0..=1.0);
        }
        let mu = mu_star + width * rng.random_range(-1.0..=1.0);
        if constraint_value(eval, &v, mu, config.alpha) < 0.0 {
            continue;
        }
        feasible += 1;
        let j = cost(&v, mu, v_d, config.gamma);
        if j < j_star - 1e-9 * scale(j_star) {
            violations += 1;
            first_violation.get_or_insert_with(|| (v.clone(), mu));
        }
    }
    let lambda = candidate.lambda;
    let stationarity: f64 = v_star
        .iter()
        .zip(v_d)
        .zip(&eval.lg_h)
        .map(|((vs, vd), g)| (vs - vd - lambda * g).powi(2))
        .sum::<f64>()
        .sqrt();
    let constraint_at_candidate = constraint_value(eval, v_star, mu_star, config.alpha);
    Ok(OracleReport {
        samples,
        feasible,
        violations,
        first_violation,
        kkt_residual: stationarity + (config.gamma * mu_star - lambda * eval.h).abs(),
        slackness: (lambda * constraint_at_candidate).abs(),
        constraint_at_candidate,
        lambda,
    })
}

/// Solves the filter and checks the result with [`check_candidate`].
pub fn qp_reference_oracle(
    eval: &BarrierEvaluation,
    v_d: &[f64],
    config: &FilterConfig,
    samples: usize,
    seed: u64,
) -> Result<OracleReport> {
    let decision = solve_filter(eval, v_d, config)?;
    check_candidate(eval, v_d, config, &decision, samples, seed)
}
