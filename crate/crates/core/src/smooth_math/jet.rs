//! Truncated Taylor arithmetic.
//!
//! A [`Jet`] carries the first `N` Taylor coefficients of a scalar quantity
//! along one curve parameter `s`: `c[k] = (1/k!) d^k/ds^k f(s)` at `s = 0`.
//! Every operation below propagates the coefficients exactly up to the
//! truncation order, so composing jets differentiates compositions without
//! hand-derived formulas.
//!
//! Jets are generic over their coefficient type. A coefficient may itself be
//! a jet, which is how mixed derivatives are taken: the outer jet follows the
//! drift flow, the inner one a single seeded direction (time or an input
//! column).

use std::fmt;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

/// Scalar arithmetic shared by `f64` and (nested) jets.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// Lifts a plain number (all derivative parts zero).
    fn cst(v: f64) -> Self;
    /// The innermost primal value.
    fn value(&self) -> f64;
    fn scale(self, k: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sin_cos(self) -> (Self, Self);
    /// `atan2(self, x)`, defined away from the origin.
    fn atan2(self, x: Self) -> Self;

    fn sin(self) -> Self {
        self.sin_cos().0
    }
    fn cos(self) -> Self {
        self.sin_cos().1
    }
    fn recip(self) -> Self {
        Self::cst(1.0) / self
    }
    fn square(self) -> Self {
        self * self
    }
    fn add_f(self, k: f64) -> Self {
        self + Self::cst(k)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn scale(self, k: f64) -> Self {
        self * k
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin_cos(self) -> (Self, Self) {
        f64::sin_cos(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
}

/// Truncated Taylor series with `N` coefficients over coefficient type `T`.
#[derive(Clone, Copy, PartialEq)]
pub struct Jet<T, const N: usize> {
    pub c: [T; N],
}

impl<T: Real, const N: usize> fmt::Debug for Jet<T, N> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.c.iter()).finish()
    }
}

impl<T: Real, const N: usize> Jet<T, N> {
    pub fn new(c: [T; N]) -> Self {
        Self { c }
    }

    pub fn zero() -> Self {
        Self { c: [T::cst(0.0); N] }
    }

    pub fn constant(v: T) -> Self {
        let mut j = Self::zero();
        j.c[0] = v;
        j
    }

    /// The identity curve `s ↦ v + s`.
    pub fn variable(v: T) -> Self {
        let mut j = Self::constant(v);
        if N > 1 {
            j.c[1] = T::cst(1.0);
        }
        j
    }

    pub fn primal(&self) -> T {
        self.c[0]
    }

    /// `k`-th derivative with respect to the curve parameter.
    pub fn derivative(&self, k: usize) -> T {
        self.c[k].scale(factorial(k))
    }

    /// Series of `d/ds`. The top coefficient is unknown and set to zero, so
    /// the result is exact only through order `N - 2`.
    pub fn differentiate(&self) -> Self {
        let mut out = Self::zero();
        for k in 0..N.saturating_sub(1) {
            out.c[k] = self.c[k + 1].scale((k + 1) as f64);
        }
        out
    }

    /// Antiderivative with constant term `c0`; the highest input coefficient
    /// is dropped.
    pub fn integrate(&self, c0: T) -> Self {
        let mut out = Self::zero();
        out.c[0] = c0;
        for k in 1..N {
            out.c[k] = self.c[k - 1].scale(1.0 / k as f64);
        }
        out
    }
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * i as f64)
}

impl<T: Real, const N: usize> Add for Jet<T, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl<T: Real, const N: usize> AddAssign for Jet<T, N> {
    #[inline]
    fn add_assign(&mut self, rhs: Self) {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a += b;
        }
    }
}

impl<T: Real, const N: usize> Sub for Jet<T, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, rhs: Self) -> Self {
        self -= rhs;
        self
    }
}

impl<T: Real, const N: usize> SubAssign for Jet<T, N> {
    #[inline]
    fn sub_assign(&mut self, rhs: Self) {
        for (a, b) in self.c.iter_mut().zip(rhs.c) {
            *a -= b;
        }
    }
}

impl<T: Real, const N: usize> Neg for Jet<T, N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        for a in self.c.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl<T: Real, const N: usize> Mul for Jet<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        let mut out = Self::zero();
        for k in 0..N {
            let mut acc = self.c[0] * rhs.c[k];
            for j in 1..=k {
                acc += self.c[j] * rhs.c[k - j];
            }
            out.c[k] = acc;
        }
        out
    }
}

impl<T: Real, const N: usize> MulAssign for Jet<T, N> {
    #[inline]
    fn mul_assign(&mut self, rhs: Self) {
        *self = *self * rhs;
    }
}

impl<T: Real, const N: usize> Div for Jet<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, rhs: Self) -> Self {
        let inv_b0 = rhs.c[0].recip();
        let mut q = Self::zero();
        for k in 0..N {
            let mut acc = self.c[k];
            for j in 1..=k {
                acc -= rhs.c[j] * q.c[k - j];
            }
            q.c[k] = acc * inv_b0;
        }
        q
    }
}

impl<T: Real, const N: usize> Real for Jet<T, N> {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::constant(T::cst(v))
    }

    #[inline]
    fn value(&self) -> f64 {
        self.c[0].value()
    }

    #[inline]
    fn scale(mut self, k: f64) -> Self {
        for a in self.c.iter_mut() {
            *a = a.scale(k);
        }
        self
    }

    fn exp(self) -> Self {
        let mut e = Self::zero();
        e.c[0] = self.c[0].exp();
        for k in 1..N {
            let mut acc = self.c[1] * e.c[k - 1];
            for j in 2..=k {
                acc += (self.c[j] * e.c[k - j]).scale(j as f64);
            }
            e.c[k] = acc.scale(1.0 / k as f64);
        }
        e
    }

    fn ln(self) -> Self {
        let inv_a0 = self.c[0].recip();
        let mut l = Self::zero();
        l.c[0] = self.c[0].ln();
        for k in 1..N {
            let mut acc = self.c[k];
            for j in 1..k {
                acc -= (l.c[j] * self.c[k - j]).scale(j as f64 / k as f64);
            }
            l.c[k] = acc * inv_a0;
        }
        l
    }

    fn sqrt(self) -> Self {
        let mut s = Self::zero();
        s.c[0] = self.c[0].sqrt();
        let inv = s.c[0].scale(2.0).recip();
        for k in 1..N {
            let mut acc = self.c[k];
            for j in 1..k {
                acc -= s.c[j] * s.c[k - j];
            }
            s.c[k] = acc * inv;
        }
        s
    }

    fn sin_cos(self) -> (Self, Self) {
        let mut s = Self::zero();
        let mut c = Self::zero();
        let (s0, c0) = self.c[0].sin_cos();
        s.c[0] = s0;
        c.c[0] = c0;
        for k in 1..N {
            let mut acc_s = self.c[1] * c.c[k - 1];
            let mut acc_c = self.c[1] * s.c[k - 1];
            for j in 2..=k {
                acc_s += (self.c[j] * c.c[k - j]).scale(j as f64);
                acc_c += (self.c[j] * s.c[k - j]).scale(j as f64);
            }
            s.c[k] = acc_s.scale(1.0 / k as f64);
            c.c[k] = acc_c.scale(-1.0 / k as f64);
        }
        (s, c)
    }

    fn atan2(self, x: Self) -> Self {
        // d/ds atan2(y, x) = (x y' - y x') / (x² + y²)
        let y = self;
        let rate = (x * y.differentiate() - y * x.differentiate()) / (x * x + y * y);
        rate.integrate(y.c[0].atan2(x.c[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type J4 = Jet<f64, 4>;

    #[test]
    fn exp_of_identity_curve_matches_series() {
        let e = J4::variable(0.0).exp();
        assert_eq!(e.c, [1.0, 1.0, 0.5, 1.0 / 6.0]);
    }

    #[test]
    fn constant_jet_behaves_like_plain_real() {
        let a = J4::cst(1.3);
        let b = J4::cst(-0.4);
        let r = ((a * b - a / b).exp().ln().sqrt() + a.sin()).atan2(b.cos());
        let p = ((1.3f64 * -0.4 - 1.3 / -0.4).exp().ln().sqrt() + 1.3f64.sin()).atan2((-0.4f64).cos());
        assert!((r.c[0] - p).abs() < 1e-15);
        assert!(r.c[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn division_inverts_multiplication() {
        let a = J4::new([1.0, 2.0, -1.0, 0.5]);
        let b = J4::new([2.0, 0.3, 0.7, -0.2]);
        let q = (a * b) / b;
        for k in 0..4 {
            assert!((q.c[k] - a.c[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn sqrt_squares_back() {
        let a = J4::new([2.0, 0.3, 0.7, -0.2]);
        let s = a.sqrt();
        let back = s * s;
        for k in 0..4 {
            assert!((back.c[k] - a.c[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn atan2_derivative_on_unit_circle() {
        // (cos s, sin s) has angle s, so the jet is exactly the identity curve.
        let s = J4::variable(0.3);
        let (sn, cs) = s.sin_cos();
        let ang = sn.atan2(cs);
        assert!((ang.c[0] - 0.3).abs() < 1e-15);
        assert!((ang.c[1] - 1.0).abs() < 1e-14);
        assert!(ang.c[2].abs() < 1e-14 && ang.c[3].abs() < 1e-14);
    }

    #[test]
    fn nested_jets_give_mixed_partials() {
        // f(x, y) = x² y; outer seeds x, inner seeds y.
        type Inner = Jet<f64, 2>;
        type Outer = Jet<Inner, 3>;
        let x = Outer::variable(Inner::cst(1.5));
        let y = Outer::constant(Inner::variable(-2.0));
        let f = x * x * y;
        // ∂²f/∂x∂y = 2x
        assert!((f.c[1].c[1] - 3.0).abs() < 1e-15);
        // ∂f/∂y = x²
        assert!((f.c[0].c[1] - 2.25).abs() < 1e-15);
    }
}
