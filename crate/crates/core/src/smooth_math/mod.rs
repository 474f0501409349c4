//! Smooth composition primitives and Taylor-mode differentiation.
//!
//! `softmin`/`softmax` are the log-sum-exp soft minimum and soft maximum with
//! sharpness `κ`. Both are evaluated with a max-shift so `κ·z` of several
//! hundred does not overflow, and both are generic over [`Real`] so the same
//! code differentiates through them.

pub mod jet;

pub use jet::{Jet, Real};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sharpness of the three log-sum-exp compositions in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessParams {
    /// Soft maximum over buffered perception barriers.
    pub kappa: f64,
    /// Soft minimum composing the relaxed barrier `h`.
    pub epsilon: f64,
    /// Soft minimum inside each perception barrier.
    pub rho: f64,
}

impl Default for SharpnessParams {
    fn default() -> Self {
        Self {
            kappa: 30.0,
            epsilon: 10.0,
            rho: 30.0,
        }
    }
}

impl SharpnessParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa", self.kappa), ("epsilon", self.epsilon), ("rho", self.rho)] {
            check_sharpness(v).map_err(|_| Error::usage(format!("sharpness.{name} must be > 0, got {v}")))?;
        }
        Ok(())
    }
}

fn check_sharpness(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(Error::usage(format!(
            "sharpness must be positive and finite, got {kappa}"
        )))
    }
}

fn check_args<T: Real>(z: &[T], kappa: f64) -> Result<()> {
    if z.is_empty() {
        return Err(Error::usage("soft min/max of an empty list"));
    }
    check_sharpness(kappa)
}

/// `-(1/κ) log Σ exp(-κ z_i)`.
pub fn softmin(z: &[f64], kappa: f64) -> Result<f64> {
    softmin_real(z, kappa)
}

/// `(1/κ) log Σ exp(κ z_i) - (log N)/κ`.
pub fn softmax(z: &[f64], kappa: f64) -> Result<f64> {
    softmax_real(z, kappa)
}

pub fn softmin_real<T: Real>(z: &[T], kappa: f64) -> Result<T> {
    check_args(z, kappa)?;
    let m = z.iter().map(Real::value).fold(f64::INFINITY, f64::min);
    let shift = T::cst(m);
    let mut sum = T::cst(0.0);
    for &zi in z {
        sum += (zi - shift).scale(-kappa).exp();
    }
    Ok(shift - sum.ln().scale(1.0 / kappa))
}

pub fn softmax_real<T: Real>(z: &[T], kappa: f64) -> Result<T> {
    check_args(z, kappa)?;
    let m = z.iter().map(Real::value).fold(f64::NEG_INFINITY, f64::max);
    let shift = T::cst(m);
    let mut sum = T::cst(0.0);
    for &zi in z {
        sum += (zi - shift).scale(kappa).exp();
    }
    // ln Σ - ln N is formed before scaling so equal arguments return m exactly.
    Ok(shift + sum.ln().add_f(-(z.len() as f64).ln()).scale(1.0 / kappa))
}

/// Signed integer coefficients `a_j` of the transition polynomial
/// `s^(r+2) Σ_j a_j s^j`, `j = 0..=r+1`.
pub fn smoothstep_coefficients(r: u32) -> Vec<i128> {
    let r = r as u64;
    (0..=r + 1)
        .map(|j| {
            let sign = if j % 2 == 0 { 1 } else { -1 };
            sign * binomial(r + 1 + j, j) * binomial(2 * r + 3, r + 1 - j)
        })
        .collect()
}

fn binomial(n: u64, k: u64) -> i128 {
    let k = k.min(n - k);
    let mut acc: i128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as i128 / (i + 1) as i128;
    }
    acc
}

/// Smooth 0→1 transition over `[0, 1/ν]` whose first `r + 1` derivatives
/// vanish at both ends.
pub fn smoothstep_eta(t: f64, r: u32, nu: f64) -> f64 {
    smoothstep_eta_real(t, r, nu)
}

pub fn smoothstep_eta_real<T: Real>(t: T, r: u32, nu: f64) -> T {
    debug_assert!(nu >= 1.0, "transition rate ν must be ≥ 1");
    let s_val = nu * t.value();
    if s_val < 0.0 {
        return T::cst(0.0);
    }
    if s_val > 1.0 {
        return T::cst(1.0);
    }
    let s = t.scale(nu);
    let coeffs = smoothstep_coefficients(r);
    let mut poly = T::cst(0.0);
    for &a in coeffs.iter().rev() {
        poly = poly * s + T::cst(a as f64);
    }
    let mut lead = T::cst(1.0);
    for _ in 0..r + 2 {
        lead *= s;
    }
    lead * poly
}

/// A vector field that can be evaluated over any [`Real`] scalar.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval<T: Real>(&self, x: &[T]) -> Vec<T>;
}

/// A scalar function that can be evaluated over any [`Real`] scalar.
pub trait ScalarField {
    fn eval<T: Real>(&self, x: &[T]) -> T;
}

/// Taylor expansion of the flow `x(s)` of `ẋ = field(x)` through `x(0) = x0`.
///
/// Picard iteration on truncated series: each pass fixes one more
/// coefficient, so `N - 1` passes make all `N` exact.
pub fn flow_series<T, F, const N: usize>(field: &F, x0: &[T]) -> Vec<Jet<T, N>>
where
    T: Real,
    F: VectorField,
{
    let mut x: Vec<Jet<T, N>> = x0.iter().map(|&v| Jet::constant(v)).collect();
    for _ in 1..N {
        let fx = field.eval(&x);
        x = fx.iter().zip(x0).map(|(f, &v)| f.integrate(v)).collect();
    }
    x
}

/// `L_f^order ζ` at `point`, from the Taylor expansion of `ζ` along the flow
/// of `f`. `N` is the jet length; `order` must be below it.
pub fn lie_derivative<F, Z, const N: usize>(field: &F, scalar_fn: &Z, point: &[f64], order: usize) -> Result<f64>
where
    F: VectorField,
    Z: ScalarField,
{
    if order >= N {
        return Err(Error::usage(format!(
            "Lie derivative of order {order} needs a jet longer than {N}"
        )));
    }
    if point.len() != field.dim() {
        return Err(Error::usage(format!(
            "point has {} entries, field expects {}",
            point.len(),
            field.dim()
        )));
    }
    let curve = flow_series::<f64, F, N>(field, point);
    Ok(scalar_fn.eval(&curve).derivative(order))
}
