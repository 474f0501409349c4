use proptest::prelude::*;

use safenav::cbf_composer::{BarrierComposer, BarrierEvaluation, CascadeState, HocbfChainConfig};
use safenav::environment::{cast_scan, Detection, LidarConfig, ObstacleMap, Point, RawScan, Shape, Workspace};
use safenav::perception_barrier::{build_frame, BarrierBuffer, EllipseParam, PerceptionConfig};
use safenav::robot_model::UnicycleModel;
use safenav::safety_filter::{constraint_value, cost, solve_filter, step_control, ControlDynamics, FilterConfig};
use safenav::sim_engine::integrate_rk4;
use safenav::smooth_math::{smoothstep_eta, softmax, softmin};

const MAX_RANGE: f64 = 5.0;

fn detections() -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec(
        (0.3f64..MAX_RANGE, -std::f64::consts::PI..std::f64::consts::PI)
            .prop_map(|(range, bearing)| Detection { range, bearing }),
        0..8,
    )
}

fn scan(origin: [f64; 2], detections: Vec<Detection>) -> RawScan {
    RawScan {
        origin: Point::new(origin[0], origin[1]),
        max_range: MAX_RANGE,
        detections,
    }
}

/// Frames 0..=4 with period 0.2; the current interval is [0.8, 1.0].
fn buffer(scans: Vec<Vec<Detection>>, window: usize) -> BarrierBuffer {
    let cfg = PerceptionConfig::default();
    let mut iter = scans.into_iter().enumerate();
    let (_, first) = iter.next().unwrap();
    let mut b = BarrierBuffer::new(
        build_frame(&scan([0.0, 0.0], first), 0, &cfg, 30.0),
        window,
        0.2,
        30.0,
        2,
        1.2,
    )
    .unwrap();
    for (k, d) in iter {
        let origin = [0.1 * k as f64, -0.05 * k as f64];
        b.push(build_frame(&scan(origin, d), k as u64, &cfg, 30.0)).unwrap();
    }
    b
}

fn composer() -> BarrierComposer<UnicycleModel> {
    BarrierComposer::new(
        UnicycleModel::default(),
        ControlDynamics::standard(),
        HocbfChainConfig::default(),
        10.0,
    )
    .unwrap()
}

proptest! {
    #[test]
    fn soft_extrema_bracket_the_hard_ones(
        z in prop::collection::vec(-100.0f64..100.0, 1..12),
        kappa in 0.5f64..50.0,
    ) {
        let n = z.len() as f64;
        let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let tol = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        let smin = softmin(&z, kappa).unwrap();
        let smax = softmax(&z, kappa).unwrap();
        prop_assert!(smin <= lo + tol && smin >= lo - n.ln() / kappa - tol);
        prop_assert!(smax <= hi + tol && smax >= hi - n.ln() / kappa - tol);
    }

    #[test]
    fn eta_is_a_monotone_unit_blend(a in -1.0f64..2.0, b in -1.0f64..2.0, r in 1u32..4, nu in 1.0f64..3.0) {
        let (t0, t1) = if a <= b { (a, b) } else { (b, a) };
        let (e0, e1) = (smoothstep_eta(t0, r, nu), smoothstep_eta(t1, r, nu));
        prop_assert!((0.0..=1.0).contains(&e0) && (0.0..=1.0).contains(&e1));
        prop_assert!(e0 <= e1 + 1e-15);
    }

    #[test]
    fn ellipse_geometry(
        qx in -10.0f64..10.0, qy in -10.0f64..10.0,
        range in 0.0f64..MAX_RANGE, bearing in -7.0f64..7.0, eps_a in 0.01f64..1.0,
    ) {
        let e = EllipseParam::from_detection(Point::new(qx, qy), range, bearing, MAX_RANGE, eps_a);
        let half = (MAX_RANGE - range) / 2.0;
        prop_assert!(e.semi_major > 0.0 && e.semi_minor > 0.0);
        let pythagoras = e.semi_minor.powi(2) + half * half - e.semi_major.powi(2);
        prop_assert!(pythagoras.abs() <= 1e-12 * e.semi_major.powi(2).max(1.0));
        let r = e.rotation();
        let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
        let gram = [
            r[0][0] * r[0][0] + r[0][1] * r[0][1] - 1.0,
            r[0][0] * r[1][0] + r[0][1] * r[1][1],
            r[1][0] * r[1][0] + r[1][1] * r[1][1] - 1.0,
        ];
        prop_assert!((det - 1.0).abs() < 1e-14);
        prop_assert!(gram.iter().all(|g| g.abs() < 1e-14));
        // The hit point and the rim point are both strictly inside.
        let (s, c) = bearing.sin_cos();
        let hit = [qx + range * c, qy + range * s];
        let rim = [qx + MAX_RANGE * c, qy + MAX_RANGE * s];
        prop_assert!(e.eval(hit) < 0.0 && e.eval(rim) < 0.0);
    }

    #[test]
    fn safe_for_a_frame_means_outside_every_ellipse(
        d in detections(),
        px in -6.0f64..6.0, py in -6.0f64..6.0,
    ) {
        let frame = build_frame(&scan([0.0, 0.0], d), 0, &PerceptionConfig::default(), 30.0);
        let q = [px, py];
        if frame.eval(q) >= 0.0 {
            prop_assert!(frame.disk(q) >= 0.0);
            prop_assert!(frame.ellipses.iter().all(|e| e.eval(q) >= 0.0));
        }
    }

    #[test]
    fn detections_stay_within_range(
        circles in prop::collection::vec((-8.0f64..8.0, -8.0f64..8.0, 0.2f64..1.5), 1..6),
        max_range in 1.0f64..8.0,
    ) {
        let mut map = ObstacleMap::empty(Workspace { xmin: -10.0, xmax: 10.0, ymin: -10.0, ymax: 10.0 });
        for (x, y, r) in circles {
            if x.hypot(y) > r + 0.05 {
                map.obstacles.push(Shape::circle([x, y], r).unwrap());
            }
        }
        let lidar = LidarConfig { max_range, ..LidarConfig::default() };
        let raw = cast_scan(&map, Point::new(0.0, 0.0), &lidar).unwrap();
        prop_assert!(raw.detections.len() <= lidar.ray_count);
        prop_assert!(raw.detections.iter().all(|d| d.range >= 0.0 && d.range <= max_range));
    }

    #[test]
    fn buffer_holds_consecutive_frames(window in 1usize..6, pushes in 0u64..12) {
        let cfg = PerceptionConfig::default();
        let mut b = BarrierBuffer::new(build_frame(&scan([0.0, 0.0], vec![]), 0, &cfg, 30.0), window, 0.2, 30.0, 2, 1.2)
            .unwrap();
        for k in 1..=pushes {
            b.push(build_frame(&scan([k as f64, 0.0], vec![]), k, &cfg, 30.0)).unwrap();
        }
        let indices: Vec<u64> = b.frames().map(|f| f.index).collect();
        prop_assert_eq!(indices.len(), window + 1);
        let expected: Vec<u64> = (0..=window as u64).map(|i| pushes.saturating_sub(i)).collect();
        prop_assert_eq!(indices, expected);
        prop_assert!(b.push(build_frame(&scan([0.0, 0.0], vec![]), pushes + 2, &cfg, 30.0)).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn h_lies_between_soft_and_hard_minimum(
        scans in prop::collection::vec(detections(), 5),
        t in 0.8f64..1.0,
        px in -1.5f64..1.5, py in -1.5f64..1.5,
        v in -2.9f64..2.9, theta in -3.2f64..3.2,
        u1 in -3.0f64..3.0, u2 in -1.0f64..1.0,
    ) {
        let b = buffer(scans, 3);
        let state = CascadeState::new(t, vec![px, py, v, theta], vec![u1, u2]);
        let eval = composer().eval_h(&b, &state).unwrap();
        let parts = eval.components.composed();
        prop_assert_eq!(parts.len(), 7);
        let lo = parts.iter().copied().fold(f64::INFINITY, f64::min);
        let tol = 1e-12 * (1.0 + lo.abs());
        prop_assert!(eval.h <= lo + tol);
        prop_assert!(eval.h >= lo - 7f64.ln() / 10.0 - tol);
    }
}

fn evaluation() -> impl Strategy<Value = (BarrierEvaluation, Vec<f64>)> {
    (
        -5.0f64..5.0,
        -50.0f64..50.0,
        -50.0f64..50.0,
        prop::collection::vec(-5.0f64..5.0, 2),
        prop::collection::vec(-5.0f64..5.0, 2),
    )
        .prop_map(|(h, dh, lf, lg, vd)| (BarrierEvaluation::from_parts(h, dh, lf, lg), vd))
}

proptest! {
    #[test]
    fn filter_is_inactive_exactly_when_nominal_is_feasible((eval, v_d) in evaluation()) {
        let cfg = FilterConfig::default();
        let d = solve_filter(&eval, &v_d, &cfg).unwrap();
        prop_assert_eq!(d.omega, constraint_value(&eval, &v_d, 0.0, cfg.alpha));
        prop_assert_eq!(d.lambda == 0.0, d.omega >= 0.0);
        prop_assert!(d.lambda >= 0.0);
        for i in 0..2 {
            prop_assert_eq!(d.v_star[i], v_d[i] + d.lambda * eval.lg_h[i]);
        }
        let g = constraint_value(&eval, &d.v_star, d.mu_star, cfg.alpha);
        prop_assert!(g >= -1e-9 * (1.0 + d.omega.abs()));
    }

    #[test]
    fn no_feasible_point_beats_the_closed_form(
        (eval, v_d) in evaluation(),
        samples in prop::collection::vec((-20.0f64..20.0, -20.0f64..20.0, -2.0f64..2.0), 64),
    ) {
        let cfg = FilterConfig::default();
        let d = solve_filter(&eval, &v_d, &cfg).unwrap();
        let best = cost(&d.v_star, d.mu_star, &v_d, cfg.gamma);
        for (a, b, mu) in samples {
            let v = [d.v_star[0] + a, d.v_star[1] + b];
            let mu = d.mu_star + mu;
            if constraint_value(&eval, &v, mu, cfg.alpha) >= 0.0 {
                prop_assert!(cost(&v, mu, &v_d, cfg.gamma) >= best - 1e-9 * (1.0 + best));
            }
        }
    }

    #[test]
    fn control_steady_state_and_semigroup(
        v in prop::collection::vec(-5.0f64..5.0, 2),
        u in prop::collection::vec(-5.0f64..5.0, 2),
        dt1 in 1e-4f64..0.5, dt2 in 1e-4f64..0.5,
    ) {
        let dyn_ = ControlDynamics::standard();
        // A = -I, B = I: the equilibrium under constant v is u = v.
        let held = step_control(&dyn_, &v, &v, dt1).unwrap();
        prop_assert!(held.iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs())));
        let two = step_control(&dyn_, &step_control(&dyn_, &u, &v, dt1).unwrap(), &v, dt2).unwrap();
        let one = step_control(&dyn_, &u, &v, dt1 + dt2).unwrap();
        prop_assert!(two.iter().zip(&one).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs())));
        for i in 0..2 {
            let exact = v[i] + (u[i] - v[i]) * (-(dt1 + dt2)).exp();
            prop_assert!((one[i] - exact).abs() <= 1e-12 * (1.0 + exact.abs()));
        }
    }

    #[test]
    fn rk4_step_is_the_quartic_taylor_polynomial(x0 in -10.0f64..10.0, dt in 1e-4f64..1.0) {
        let next = integrate_rk4(|_, x: &[f64]| x.to_vec(), &[x0], 0.0, dt).unwrap();
        let taylor = x0 * (1.0 + dt + dt * dt / 2.0 + dt.powi(3) / 6.0 + dt.powi(4) / 24.0);
        prop_assert!((next[0] - taylor).abs() <= 1e-14 * (1.0 + taylor.abs()));
    }
}
