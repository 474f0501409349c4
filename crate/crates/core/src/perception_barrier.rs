//! Local barrier functions built from LiDAR scans, and the rolling
//! time-varying barrier `ψ₀` that blends the most recent of them.
//!
//! Each detection `(r, θ)` seen from `q` becomes an ellipse whose major axis
//! runs from the hit point `c = q + r(cos θ, sin θ)` to the edge of the
//! detection disk `d = q + r̄(cos θ, sin θ)`, inflated by `ε_a`. The frame
//! barrier is the soft minimum of the shrunk detection disk and the outside
//! of every ellipse.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::environment::{Point, RawScan};
use crate::error::{Error, Result};
use crate::smooth_math::{smoothstep_eta_real, softmax_real, softmin_real, Real};

/// `exp(x)` is exactly zero in double precision below this.
const EXP_UNDERFLOW: f64 = -745.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    /// Number of buffered frames besides the newest, `N`.
    pub window: usize,
    /// Ellipse inflation `ε_a` (m).
    pub eps_a: f64,
    /// Detection disk shrink `ε_β` (m).
    pub eps_beta: f64,
    /// Transition rate `ν ≥ 1` of the frame blend.
    pub nu: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            window: 3,
            eps_a: 0.15,
            eps_beta: 0.15,
            nu: 1.2,
        }
    }
}

impl PerceptionConfig {
    pub fn validate(&self, max_range: f64) -> Result<()> {
        if self.window == 0 {
            return Err(Error::usage("perception.window must be at least 1"));
        }
        if !(self.eps_a > 0.0) {
            return Err(Error::usage("perception.eps_a must be positive"));
        }
        if !(self.eps_beta >= 0.0 && self.eps_beta < max_range) {
            return Err(Error::usage("perception.eps_beta must lie in [0, max_range)"));
        }
        if !(self.nu >= 1.0) {
            return Err(Error::usage("perception.nu must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EllipseParam {
    pub center: Point,
    /// Bearing of the major axis; the rotation is `[[cos, sin], [-sin, cos]]`.
    pub bearing: f64,
    cos: f64,
    sin: f64,
    pub semi_major: f64,
    pub semi_minor: f64,
}

impl EllipseParam {
    pub fn from_detection(origin: Point, range: f64, bearing: f64, max_range: f64, eps_a: f64) -> Self {
        let (sin, cos) = bearing.sin_cos();
        let dir = Point::new(cos, sin);
        let hit = origin + dir * range;
        let rim = origin + dir * max_range;
        let half = (max_range - range) / 2.0;
        let semi_major = half + eps_a;
        let semi_minor = (semi_major * semi_major - half * half).sqrt();
        Self {
            center: (hit + rim) / 2.0,
            bearing,
            cos,
            sin,
            semi_major,
            semi_minor,
        }
    }

    pub fn rotation(&self) -> [[f64; 2]; 2] {
        [[self.cos, self.sin], [-self.sin, self.cos]]
    }

    /// Negative inside the ellipse, zero on it, positive outside.
    pub fn eval<T: Real>(&self, q: [T; 2]) -> T {
        let dx = q[0].add_f(-self.center.x);
        let dy = q[1].add_f(-self.center.y);
        let along = dx.scale(self.cos) + dy.scale(self.sin);
        let across = dy.scale(self.cos) - dx.scale(self.sin);
        let a2 = self.semi_major * self.semi_major;
        let z2 = self.semi_minor * self.semi_minor;
        (along * along).scale(1.0 / a2) + (across * across).scale(1.0 / z2) - T::cst(1.0)
    }

    fn eval_f64(&self, q: [f64; 2]) -> f64 {
        self.eval(q)
    }
}

/// One scan turned into a local barrier `b_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionFrame {
    pub index: u64,
    pub origin: Point,
    pub max_range: f64,
    pub ellipses: Vec<EllipseParam>,
    pub disk_radius: f64,
    pub eps_a: f64,
    pub eps_beta: f64,
    pub rho: f64,
}

pub fn build_frame(scan: &RawScan, k: u64, config: &PerceptionConfig, rho: f64) -> PerceptionFrame {
    let ellipses = scan
        .detections
        .iter()
        .map(|d| EllipseParam::from_detection(scan.origin, d.range, d.bearing, scan.max_range, config.eps_a))
        .collect();
    PerceptionFrame {
        index: k,
        origin: scan.origin,
        max_range: scan.max_range,
        ellipses,
        disk_radius: scan.max_range - config.eps_beta,
        eps_a: config.eps_a,
        eps_beta: config.eps_beta,
        rho,
    }
}

impl PerceptionFrame {
    /// Detection disk barrier `β_k`.
    pub fn disk<T: Real>(&self, q: [T; 2]) -> T {
        let dx = q[0].add_f(-self.origin.x);
        let dy = q[1].add_f(-self.origin.y);
        T::cst(self.disk_radius * self.disk_radius) - dx * dx - dy * dy
    }

    /// `b_k` at position `q`.
    pub fn eval<T: Real>(&self, q: [T; 2]) -> T {
        let beta = self.disk(q);
        if self.ellipses.is_empty() {
            return beta;
        }
        // Terms whose weight underflows to exactly zero are dropped; the
        // result is bit-identical to the full soft minimum.
        let qv = [q[0].value(), q[1].value()];
        let values: Vec<f64> = self.ellipses.iter().map(|e| e.eval_f64(qv)).collect();
        let floor = values.iter().copied().fold(beta.value(), f64::min);
        let mut args = Vec::with_capacity(values.len() + 1);
        args.push(beta);
        for (e, v) in self.ellipses.iter().zip(&values) {
            if -self.rho * (v - floor) > EXP_UNDERFLOW {
                args.push(e.eval(q));
            }
        }
        softmin_real(&args, self.rho).expect("non-empty arguments and validated rho")
    }

    /// `b_k` of a state whose first two entries are the position.
    pub fn eval_state(&self, x: &[f64]) -> f64 {
        self.eval([x[0], x[1]])
    }

    pub fn detections(&self) -> usize {
        self.ellipses.len()
    }
}

/// The `N + 1` most recent frames, newest first, and the blend that turns
/// them into the time-varying barrier `ψ₀`.
#[derive(Debug, Clone)]
pub struct BarrierBuffer {
    frames: VecDeque<Arc<PerceptionFrame>>,
    newest: u64,
    window: usize,
    period: f64,
    kappa: f64,
    eta_order: u32,
    nu: f64,
}

impl BarrierBuffer {
    /// Seeds the buffer with `N + 1` copies of the first frame.
    pub fn new(
        first: PerceptionFrame,
        window: usize,
        period: f64,
        kappa: f64,
        eta_order: u32,
        nu: f64,
    ) -> Result<Self> {
        if window == 0 {
            return Err(Error::usage("buffer window must be at least 1"));
        }
        if !(period > 0.0) || !(kappa > 0.0) || !(nu >= 1.0) || eta_order == 0 {
            return Err(Error::usage("buffer needs period > 0, kappa > 0, nu ≥ 1, r ≥ 1"));
        }
        let newest = first.index;
        let first = Arc::new(first);
        Ok(Self {
            frames: std::iter::repeat_n(first, window + 1).collect(),
            newest,
            window,
            period,
            kappa,
            eta_order,
            nu,
        })
    }

    pub fn push(&mut self, frame: PerceptionFrame) -> Result<()> {
        if frame.index != self.newest + 1 {
            return Err(Error::usage(format!(
                "frame {} pushed after frame {}",
                frame.index, self.newest
            )));
        }
        self.newest = frame.index;
        self.frames.pop_back();
        self.frames.push_front(Arc::new(frame));
        Ok(())
    }

    pub fn newest_index(&self) -> u64 {
        self.newest
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Frames newest first; `frames()[i]` is `b_{k-i}`.
    pub fn frames(&self) -> impl Iterator<Item = &PerceptionFrame> {
        self.frames.iter().map(|f| f.as_ref())
    }

    pub fn newest_frame(&self) -> &PerceptionFrame {
        &self.frames[0]
    }

    /// Interval `[kT, (k+1)T]` on which the current frames define `ψ₀`.
    pub fn interval(&self) -> (f64, f64) {
        let k = self.newest as f64;
        (k * self.period, (k + 1.0) * self.period)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.interval();
        let tol = 1e-9 * hi.abs().max(1.0);
        if t < lo - tol || t > hi + tol {
            return Err(Error::usage(format!(
                "ψ₀ requested at t = {t} outside the frame interval [{lo}, {hi}]"
            )));
        }
        Ok(())
    }

    /// Blend weight `η(t/T - k)`.
    pub fn blend_weight<T: Real>(&self, t: T) -> T {
        let tau = t.scale(1.0 / self.period).add_f(-(self.newest as f64));
        smoothstep_eta_real(tau, self.eta_order, self.nu)
    }

    /// `ψ₀(t, q)`.
    pub fn eval_psi0<T: Real>(&self, t: T, q: [T; 2]) -> Result<T> {
        self.check_time(t.value())?;
        let eta = self.blend_weight(t);
        let n = self.window;
        let newest = self.frames[0].eval(q);
        let oldest = self.frames[n].eval(q);
        let blend = eta * newest + (T::cst(1.0) - eta) * oldest;
        let mut args: Vec<T> = self.frames.range(1..n).map(|f| f.eval(q)).collect();
        args.push(blend);
        softmax_real(&args, self.kappa)
    }

    pub fn eval_psi0_state(&self, t: f64, x: &[f64]) -> Result<f64> {
        self.eval_psi0(t, [x[0], x[1]])
    }

    /// Largest `b_i` over the buffered frames.
    pub fn max_buffered(&self, q: [f64; 2]) -> f64 {
        self.frames().map(|f| f.eval(q)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Samples a `grid × grid` lattice over the newest detection disk and
    /// reports whether some point is safe for both the newest frame and an
    /// older one.
    pub fn newest_overlaps_history(&self, grid: usize) -> bool {
        let newest = &self.frames[0];
        let older: Vec<&PerceptionFrame> = self.frames.iter().skip(1).map(|f| f.as_ref()).collect();
        let shared = |q: [f64; 2]| newest.eval(q) >= 0.0 && older.iter().any(|f| f.eval(q) >= 0.0);
        // The scan origin is almost always in both sets; try it first.
        if shared([newest.origin.x, newest.origin.y]) {
            return true;
        }
        let r = newest.disk_radius;
        let steps = grid.max(2) - 1;
        (0..=steps).any(|i| {
            (0..=steps).any(|j| {
                shared([
                    newest.origin.x - r + 2.0 * r * i as f64 / steps as f64,
                    newest.origin.y - r + 2.0 * r * j as f64 / steps as f64,
                ])
            })
        })
    }
}

/// Writes one frame as CSV: a row per detection with columns
/// `k,t,origin_x,origin_y,range,bearing,center_x,center_y,semi_major,semi_minor`.
pub fn write_frame_dump(path: &Path, frame: &PerceptionFrame, t: f64) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "k,t,origin_x,origin_y,range,bearing,center_x,center_y,semi_major,semi_minor"
    )
    .map_err(io)?;
    for e in &frame.ellipses {
        let range = frame.max_range - 2.0 * (e.semi_major - frame.eps_a);
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            frame.index,
            t,
            frame.origin.x,
            frame.origin.y,
            range,
            e.bearing,
            e.center.x,
            e.center.y,
            e.semi_major,
            e.semi_minor
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Detection;
    use crate::smooth_math::Jet;

    fn cfg() -> PerceptionConfig {
        PerceptionConfig::default()
    }

    fn scan(origin: [f64; 2], dets: &[(f64, f64)]) -> RawScan {
        RawScan {
            origin: Point::new(origin[0], origin[1]),
            max_range: 5.0,
            detections: dets
                .iter()
                .map(|&(range, bearing)| Detection { range, bearing })
                .collect(),
        }
    }

    #[test]
    fn ellipse_geometry_from_detection() {
        let f = build_frame(&scan([0.0, 0.0], &[(3.0, 0.0)]), 0, &cfg(), 30.0);
        let e = &f.ellipses[0];
        assert!((e.center - Point::new(4.0, 0.0)).norm() < 1e-15);
        assert!((e.semi_major - 1.15).abs() < 1e-15);
        let z = (1.15f64 * 1.15 - 1.0).sqrt();
        assert!((e.semi_minor - z).abs() < 1e-15);
        assert!((e.semi_minor * e.semi_minor + 1.0 - e.semi_major * e.semi_major).abs() < 1e-12);
        assert!((e.semi_minor - 0.5679).abs() < 1e-4);
        // The hit point and the rim lie strictly inside the inflated ellipse.
        assert!(e.eval([3.0, 0.0]) < 0.0);
        assert!(e.eval([5.0, 0.0]) < 0.0);
    }

    #[test]
    fn larger_inflation_grows_both_axes() {
        let small = build_frame(&scan([0.0, 0.0], &[(2.0, 1.0)]), 0, &cfg(), 30.0);
        let big_cfg = PerceptionConfig { eps_a: 0.3, ..cfg() };
        let big = build_frame(&scan([0.0, 0.0], &[(2.0, 1.0)]), 0, &big_cfg, 30.0);
        assert!(big.ellipses[0].semi_major > small.ellipses[0].semi_major);
        assert!(big.ellipses[0].semi_minor > small.ellipses[0].semi_minor);
    }

    #[test]
    fn detection_at_max_range_is_small_circle() {
        let f = build_frame(&scan([0.0, 0.0], &[(5.0, 0.0)]), 0, &cfg(), 30.0);
        assert!((f.ellipses[0].semi_major - 0.15).abs() < 1e-15);
        assert!((f.ellipses[0].semi_minor - 0.15).abs() < 1e-15);
    }

    #[test]
    fn rotation_is_proper() {
        let e = EllipseParam::from_detection(Point::zeros(), 1.0, 2.3, 5.0, 0.15);
        let r = e.rotation();
        let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
        assert!((det - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_frame_is_disk() {
        let f = build_frame(&scan([1.0, 2.0], &[]), 0, &cfg(), 30.0);
        assert!((f.eval([1.0, 2.0]) - 23.5225).abs() < 1e-12);
        assert_eq!(f.eval([2.0, 2.5]), f.disk([2.0, 2.5]));
    }

    #[test]
    fn ellipse_center_is_unsafe() {
        let f = build_frame(&scan([0.0, 0.0], &[(3.0, 0.0), (2.0, 1.5)]), 0, &cfg(), 30.0);
        let c = f.ellipses[1].center;
        assert_eq!(f.ellipses[1].eval([c.x, c.y]), -1.0);
        assert!(f.eval([c.x, c.y]) < 0.0);
    }

    #[test]
    fn safe_points_are_outside_ellipses_and_inside_disk() {
        let f = build_frame(
            &scan([0.0, 0.0], &[(3.0, 0.0), (2.0, 1.5), (4.0, 4.0)]),
            0,
            &cfg(),
            30.0,
        );
        for i in -60..=60 {
            for j in -60..=60 {
                let q = [i as f64 / 10.0, j as f64 / 10.0];
                if f.eval(q) >= 0.0 {
                    assert!(f.disk(q) >= 0.0);
                    assert!(f.ellipses.iter().all(|e| e.eval(q) >= 0.0));
                }
            }
        }
    }

    #[test]
    fn underflow_pruning_is_exact() {
        let dets: Vec<(f64, f64)> = (0..40).map(|i| (1.0 + 0.1 * i as f64, 0.15 * i as f64)).collect();
        let f = build_frame(&scan([0.0, 0.0], &dets), 0, &cfg(), 30.0);
        for q in [[0.1, 0.2], [-3.0, 1.0], [2.0, 2.0]] {
            let mut all = vec![f.disk(q)];
            all.extend(f.ellipses.iter().map(|e| e.eval(q)));
            assert_eq!(f.eval(q), softmin_real(&all, 30.0).unwrap());
        }
    }

    fn frame(k: u64, origin: [f64; 2]) -> PerceptionFrame {
        build_frame(&scan(origin, &[(3.0, 0.3 * k as f64)]), k, &cfg(), 30.0)
    }

    #[test]
    fn buffer_prefill_and_push() {
        let mut b = BarrierBuffer::new(frame(0, [0.0, 0.0]), 3, 0.2, 30.0, 2, 1.2).unwrap();
        assert_eq!(b.frames().count(), 4);
        assert!(b.frames().all(|f| f.index == 0));
        b.push(frame(1, [0.1, 0.0])).unwrap();
        let idx: Vec<u64> = b.frames().map(|f| f.index).collect();
        assert_eq!(idx, vec![1, 0, 0, 0]);
        assert!(matches!(b.push(frame(3, [0.2, 0.0])), Err(Error::Usage(_))));
    }

    #[test]
    fn psi0_blend_endpoints() {
        let mut b = BarrierBuffer::new(frame(0, [0.0, 0.0]), 3, 0.2, 30.0, 2, 1.2).unwrap();
        for k in 1..=5 {
            b.push(frame(k, [0.3 * k as f64, 0.0])).unwrap();
        }
        let q = [1.0, 0.5];
        let fr: Vec<&PerceptionFrame> = b.frames().collect();
        let (lo, _) = b.interval();
        let at_start = b.eval_psi0(lo, q).unwrap();
        let expect = softmax_real(&[fr[1].eval(q), fr[2].eval(q), fr[3].eval(q)], 30.0).unwrap();
        assert!((at_start - expect).abs() < 1e-12);
        let late = b.eval_psi0(lo + 0.9 * 0.2, q).unwrap();
        let expect = softmax_real(&[fr[1].eval(q), fr[2].eval(q), fr[0].eval(q)], 30.0).unwrap();
        assert!((late - expect).abs() < 1e-12);
        assert!(b.eval_psi0(lo - 0.01, q).is_err());
    }

    #[test]
    fn single_window_is_convex_combination() {
        let mut b = BarrierBuffer::new(frame(0, [0.0, 0.0]), 1, 0.2, 30.0, 2, 1.2).unwrap();
        b.push(frame(1, [0.5, 0.0])).unwrap();
        let q = [0.7, -0.4];
        let t = 0.2 + 0.3 * 0.2;
        let eta = b.blend_weight(t);
        let fr: Vec<&PerceptionFrame> = b.frames().collect();
        let expect = eta * fr[0].eval(q) + (1.0 - eta) * fr[1].eval(q);
        assert!((b.eval_psi0(t, q).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn continuous_across_push() {
        let mut b = BarrierBuffer::new(frame(0, [0.0, 0.0]), 3, 0.2, 30.0, 2, 1.2).unwrap();
        for k in 1..=4 {
            b.push(frame(k, [0.3 * k as f64, 0.1])).unwrap();
        }
        let q = [0.9, 0.3];
        let (_, hi) = b.interval();
        let before = b.eval_psi0(hi, q).unwrap();
        b.push(frame(5, [1.5, 0.1])).unwrap();
        let after = b.eval_psi0(hi, q).unwrap();
        assert!((before - after).abs() < 1e-9, "{before} vs {after}");
    }

    #[test]
    fn frame_jet_matches_finite_differences() {
        let f = build_frame(
            &scan([0.0, 0.0], &[(3.0, 0.0), (2.0, 1.5), (1.5, 3.0)]),
            0,
            &cfg(),
            30.0,
        );
        let q = [0.4, 0.9];
        let dir = [0.6, -0.8];
        let jq = [Jet::<f64, 2>::new([q[0], dir[0]]), Jet::<f64, 2>::new([q[1], dir[1]])];
        let jet = f.eval(jq).c[1];
        let h = 1e-5;
        let fd = (f.eval([q[0] + h * dir[0], q[1] + h * dir[1]]) - f.eval([q[0] - h * dir[0], q[1] - h * dir[1]]))
            / (2.0 * h);
        assert!((jet - fd).abs() / fd.abs().max(1e-8) < 1e-5, "{jet} vs {fd}");
    }
}
