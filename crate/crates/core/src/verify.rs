//! Randomized property suites behind `safenav verify`.
//!
//! Each suite draws its cases from a seeded generator and reports how many
//! checks ran and how many failed, together with the worst observed error.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::cbf_composer::{BarrierComposer, BarrierEvaluation, CascadeState, HocbfChainConfig};
use crate::environment::{cast_scan, LidarConfig, ObstacleMap, Point, Shape, Workspace};
use crate::error::{Error, Result};
use crate::perception_barrier::{build_frame, BarrierBuffer, PerceptionConfig};
use crate::robot_model::UnicycleModel;
use crate::safety_filter::{check_candidate, solve_filter, ControlDynamics, FilterConfig, FilterDecision};
use crate::smooth_math::{smoothstep_eta, smoothstep_eta_real, softmax, softmin, Jet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Softmin,
    Eta,
    Derivatives,
    Qp,
    Containment,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Softmin,
        Suite::Eta,
        Suite::Derivatives,
        Suite::Qp,
        Suite::Containment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Softmin => "softmin",
            Suite::Eta => "eta",
            Suite::Derivatives => "derivatives",
            Suite::Qp => "qp",
            Suite::Containment => "containment",
        }
    }

    pub fn parse(name: &str) -> Result<Vec<Suite>> {
        if name == "all" {
            return Ok(Self::ALL.to_vec());
        }
        Self::ALL
            .iter()
            .find(|s| s.name() == name)
            .map(|s| vec![*s])
            .ok_or_else(|| {
                Error::usage(format!(
                    "unknown suite `{name}`; expected all, softmin, eta, derivatives, qp or containment"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: usize,
    pub failures: usize,
    pub worst: f64,
    pub note: String,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.checks > 0
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<12} checks={} failures={} worst={:.3e} {}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.suite.name(),
            self.checks,
            self.failures,
            self.worst,
            self.note
        )
    }
}

/// Case counts for the suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSizes {
    pub soft_vectors: usize,
    pub derivative_states: usize,
    pub qp_instances: usize,
    pub qp_samples: usize,
    pub containment_configs: usize,
    pub containment_grid: usize,
}

impl Default for SuiteSizes {
    fn default() -> Self {
        Self {
            soft_vectors: 100_000,
            derivative_states: 200,
            qp_instances: 100,
            qp_samples: 100_000,
            containment_configs: 50,
            containment_grid: 200,
        }
    }
}

pub type Solver = fn(&BarrierEvaluation, &[f64], &FilterConfig) -> Result<FilterDecision>;

pub fn run_suite(suite: Suite, sizes: &SuiteSizes, seed: u64) -> Result<SuiteReport> {
    match suite {
        Suite::Softmin => Ok(softmin_suite(sizes.soft_vectors, seed)),
        Suite::Eta => Ok(eta_suite()),
        Suite::Derivatives => derivative_suite(sizes.derivative_states, seed),
        Suite::Qp => qp_suite(solve_filter, sizes.qp_instances, sizes.qp_samples, seed),
        Suite::Containment => containment_suite(sizes.containment_configs, sizes.containment_grid, seed),
    }
}

/// Soft min/max bounds with one ulp of slack on the bounding side.
pub fn softmin_suite(vectors: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for i in 0..vectors {
        let kappa = [1.0, 10.0, 30.0][i % 3];
        let n = rng.random_range(1..=10);
        let z: Vec<f64> = (0..n).map(|_| rng.random_range(-100.0..=100.0)).collect();
        let lo = z.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let gap = (n as f64).ln() / kappa;
        let smin = softmin(&z, kappa).expect("valid input");
        let smax = softmax(&z, kappa).expect("valid input");
        let excess = [smin - lo, (lo - gap) - smin, smax - hi, (hi - gap) - smax];
        // The lower bounds are rounded differences; their ulp is taken at
        // operand scale.
        let slack = [
            ulp(lo),
            ulp(lo.abs().max(gap).max(smin.abs())),
            ulp(hi),
            ulp(hi.abs().max(gap).max(smax.abs())),
        ];
        for (e, s) in excess.iter().zip(slack) {
            worst = worst.max(*e);
            if *e > s {
                failures += 1;
            }
        }
    }
    SuiteReport {
        suite: Suite::Softmin,
        checks: 4 * vectors,
        failures,
        worst,
        note: "largest bound excess".into(),
    }
}

fn ulp(x: f64) -> f64 {
    let x = x.abs();
    f64::from_bits(x.to_bits() + 1) - x
}

/// Derivatives of η vanish at both ends of the transition, η is ½ at the
/// midpoint, and a finite-difference check agrees with the jets.
pub fn eta_suite() -> SuiteReport {
    let (r, nu) = (2u32, 1.2);
    let mut checks = 0;
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    let mut record = |err: f64, tol: f64| {
        checks += 1;
        worst = worst.max(err);
        if !(err <= tol) {
            failures += 1;
        }
    };
    for t in [0.0, 1.0 / nu] {
        let jet = smoothstep_eta_real(Jet::<f64, 6>::variable(t), r, nu);
        for k in 1..=3 {
            record(jet.derivative(k).abs(), 1e-9);
        }
    }
    // The jets themselves are cross-checked against central differences of
    // the next lower derivative inside the transition.
    let h = 1e-6;
    for i in 1..20 {
        let t = i as f64 / 20.0 / nu;
        let at = |t: f64| smoothstep_eta_real(Jet::<f64, 6>::variable(t), r, nu);
        let (mid, plus, minus) = (at(t), at(t + h), at(t - h));
        for k in 1..=3 {
            let fd = (plus.derivative(k - 1) - minus.derivative(k - 1)) / (2.0 * h);
            record((fd - mid.derivative(k)).abs() / mid.derivative(k).abs().max(1.0), 1e-6);
        }
    }
    record((smoothstep_eta(0.5 / nu, r, nu) - 0.5).abs(), 1e-12);
    SuiteReport {
        suite: Suite::Eta,
        checks,
        failures,
        worst,
        note: "r = 2, ν = 1.2".into(),
    }
}

/// A random obstacle field with a short random walk of scans through it.
#[derive(Debug, Clone)]
pub struct RandomWorld {
    pub map: ObstacleMap,
    pub buffer: BarrierBuffer,
    pub lidar: LidarConfig,
}

impl RandomWorld {
    pub fn generate<R: Rng>(rng: &mut R) -> Self {
        let workspace = Workspace {
            xmin: -10.0,
            xmax: 10.0,
            ymin: -10.0,
            ymax: 10.0,
        };
        let mut obstacles = Vec::new();
        for _ in 0..rng.random_range(3..=8) {
            let c = [rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0)];
            let shape = if rng.random_bool(0.5) {
                Shape::circle(c, rng.random_range(0.3..1.5))
            } else {
                let s = rng.random_range(0.4..1.4);
                let a = rng.random_range(0.0..PI);
                let pts: Vec<[f64; 2]> = (0..rng.random_range(3..=6))
                    .map(|i| {
                        let ang = a + i as f64 * 2.0 * PI / 6.0 + rng.random_range(-0.3..0.3);
                        [c[0] + s * ang.cos(), c[1] + s * ang.sin()]
                    })
                    .collect();
                Shape::polygon(&pts).or_else(|_| Shape::circle(c, s))
            };
            obstacles.push(shape.expect("generated shapes are valid"));
        }
        let map = ObstacleMap { workspace, obstacles };
        let lidar = LidarConfig::default();
        let perception = PerceptionConfig {
            window: rng.random_range(1..=4),
            ..PerceptionConfig::default()
        };

        let mut pos = loop {
            let p = Point::new(rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0));
            if clear_of(&map, p, 0.5) {
                break p;
            }
        };
        let frames = rng.random_range(0..=6u64);
        let mut buffer = None;
        for k in 0..=frames {
            let scan = cast_scan(&map, pos, &lidar).expect("walk stays free");
            let frame = build_frame(&scan, k, &perception, 30.0);
            match buffer.as_mut() {
                None => {
                    buffer =
                        Some(BarrierBuffer::new(frame, perception.window, 0.2, 30.0, 2, 1.2).expect("valid buffer"))
                }
                Some(b) => b.push(frame).expect("consecutive frames"),
            }
            for _ in 0..20 {
                let step = Point::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4));
                if clear_of(&map, pos + step, 0.3) {
                    pos += step;
                    break;
                }
            }
        }
        Self {
            map,
            buffer: buffer.expect("at least one frame"),
            lidar,
        }
    }

    /// A cascade state near the newest scan origin, with `t` at least
    /// `margin` inside the current frame interval.
    pub fn random_state<R: Rng>(&self, rng: &mut R, margin: f64) -> CascadeState {
        let (lo, hi) = self.buffer.interval();
        let o = self.buffer.newest_frame().origin;
        let r = rng.random_range(0.0..3.0);
        let a = rng.random_range(-PI..PI);
        CascadeState::new(
            rng.random_range(lo + margin..hi - margin),
            vec![
                o.x + r * a.cos(),
                o.y + r * a.sin(),
                rng.random_range(-2.5..2.5),
                rng.random_range(-PI..PI),
            ],
            vec![rng.random_range(-5.0..5.0), rng.random_range(-3.5..3.5)],
        )
    }
}

fn clear_of(map: &ObstacleMap, p: Point, margin: f64) -> bool {
    let ring = (0..8).map(|i| {
        let a = i as f64 * PI / 4.0;
        p + margin * Point::new(a.cos(), a.sin())
    });
    map.check_free(p).is_ok() && ring.into_iter().all(|q| map.check_free(q).is_ok())
}

pub fn default_composer() -> BarrierComposer<UnicycleModel> {
    BarrierComposer::new(
        UnicycleModel::default(),
        ControlDynamics::standard(),
        HocbfChainConfig::default(),
        10.0,
    )
    .expect("default configuration is valid")
}

/// Relative error with the denominator floored at one.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

/// Jet-computed `∂h/∂t`, `L_f̃h`, `L_g̃h` against central differences with
/// step `1e-4`.
pub fn derivative_suite(states: usize, seed: u64) -> Result<SuiteReport> {
    let composer = default_composer();
    let dynamics = ControlDynamics::standard();
    let delta = 1e-4;
    let results: Vec<Result<f64>> = (0..states)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let world = RandomWorld::generate(&mut rng);
            let s = world.random_state(&mut rng, 2.0 * delta);
            let e = composer.eval_h(&world.buffer, &s)?;
            let h_at = |t: f64, x: &[f64], u: &[f64]| -> Result<f64> {
                Ok(composer
                    .eval_h(&world.buffer, &CascadeState::new(t, x.to_vec(), u.to_vec()))?
                    .h)
            };
            let dt = (h_at(s.t + delta, &s.x, &s.u)? - h_at(s.t - delta, &s.x, &s.u)?) / (2.0 * delta);
            let fx = crate::robot_model::dynamics(&s.x, &s.u);
            let fu = dynamics.drift(&s.u);
            let shift = |sign: f64| -> (Vec<f64>, Vec<f64>) {
                (
                    s.x.iter().zip(&fx).map(|(a, b)| a + sign * delta * b).collect(),
                    s.u.iter().zip(&fu).map(|(a, b)| a + sign * delta * b).collect(),
                )
            };
            let (xp, up) = shift(1.0);
            let (xm, um) = shift(-1.0);
            let lf = (h_at(s.t, &xp, &up)? - h_at(s.t, &xm, &um)?) / (2.0 * delta);
            let mut worst = rel_err(e.dh_dt, dt).max(rel_err(e.lf_h, lf));
            for j in 0..2 {
                let mut up = s.u.clone();
                let mut um = s.u.clone();
                for i in 0..2 {
                    up[i] += delta * dynamics.b(i, j);
                    um[i] -= delta * dynamics.b(i, j);
                }
                let lg = (h_at(s.t, &s.x, &up)? - h_at(s.t, &s.x, &um)?) / (2.0 * delta);
                worst = worst.max(rel_err(e.lg_h[j], lg));
            }
            Ok(worst)
        })
        .collect();
    let errs = results.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(SuiteReport {
        suite: Suite::Derivatives,
        checks: errs.len(),
        failures: errs.iter().filter(|&&e| !(e < 1e-4)).count(),
        worst: errs.iter().copied().fold(0.0, f64::max),
        note: "relative error, denominator floored at 1".into(),
    })
}

/// Random filter instances, half active and half inactive, checked by
/// sampling and by the optimality conditions. `solver` is injectable so a
/// deliberately broken one can be shown to fail.
pub fn qp_suite(solver: Solver, instances: usize, samples: usize, seed: u64) -> Result<SuiteReport> {
    let config = FilterConfig::default();
    let reports: Vec<Result<(bool, f64)>> = (0..2 * instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let want_active = i % 2 == 0;
            let (eval, v_d) = random_filter_instance(&mut rng, &config, want_active);
            let decision = solver(&eval, &v_d, &config)?;
            let report = check_candidate(&eval, &v_d, &config, &decision, samples, seed ^ i as u64)?;
            Ok((report.passed(), report.kkt_residual.max(report.slackness)))
        })
        .collect();
    let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        suite: Suite::Qp,
        checks: reports.len(),
        failures: reports.iter().filter(|(ok, _)| !ok).count(),
        worst: reports.iter().map(|(_, r)| *r).fold(0.0, f64::max),
        note: format!("{samples} samples per instance; worst KKT/slackness residual"),
    })
}

/// A random `(h, ∂h/∂t, L_f̃h, L_g̃h, v_d)` whose `ω` has the requested sign.
pub fn random_filter_instance<R: Rng>(
    rng: &mut R,
    config: &FilterConfig,
    active: bool,
) -> (BarrierEvaluation, Vec<f64>) {
    loop {
        let h = rng.random_range(-1.0..5.0);
        let lg = vec![rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
        let v_d = vec![rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
        let dh_dt = rng.random_range(-20.0..20.0);
        let lf = rng.random_range(-100.0..100.0);
        let eval = BarrierEvaluation::from_parts(h, dh_dt, lf, lg);
        let omega = crate::safety_filter::constraint_value(&eval, &v_d, 0.0, config.alpha);
        if (omega < 0.0) == active {
            return (eval, v_d);
        }
    }
}

/// Every grid point with `ψ₀ ≥ 0` must have some buffered `b_i ≥ 0`.
pub fn containment_suite(configs: usize, grid: usize, seed: u64) -> Result<SuiteReport> {
    let results: Vec<Result<(usize, usize, f64)>> = (0..configs)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(i as u64));
            let world = RandomWorld::generate(&mut rng);
            let (lo, hi) = world.buffer.interval();
            let t = rng.random_range(lo..=hi);
            let ws = world.map.workspace;
            let mut checked = 0;
            let mut bad = 0;
            let mut worst = f64::NEG_INFINITY;
            for a in 0..grid {
                for b in 0..grid {
                    let q = [
                        ws.xmin + (ws.xmax - ws.xmin) * a as f64 / (grid - 1) as f64,
                        ws.ymin + (ws.ymax - ws.ymin) * b as f64 / (grid - 1) as f64,
                    ];
                    if world.buffer.eval_psi0(t, q)? >= 0.0 {
                        checked += 1;
                        let best = world.buffer.max_buffered(q);
                        if best < 0.0 {
                            bad += 1;
                            worst = worst.max(-best);
                        }
                    }
                }
            }
            Ok((checked, bad, worst.max(0.0)))
        })
        .collect();
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        suite: Suite::Containment,
        checks: results.iter().map(|r| r.0).sum(),
        failures: results.iter().map(|r| r.1).sum(),
        worst: results.iter().map(|r| r.2).fold(0.0, f64::max),
        note: format!("{configs} configurations on a {grid}×{grid} grid"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SuiteSizes {
        SuiteSizes {
            soft_vectors: 2000,
            derivative_states: 8,
            qp_instances: 6,
            qp_samples: 2000,
            containment_configs: 3,
            containment_grid: 40,
        }
    }

    #[test]
    fn small_suites_pass() {
        for s in Suite::ALL {
            let r = run_suite(s, &small(), 11).unwrap();
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn sign_flipped_solver_fails_qp_suite() {
        fn flipped(eval: &BarrierEvaluation, v_d: &[f64], config: &FilterConfig) -> Result<FilterDecision> {
            let mut d = solve_filter(eval, v_d, config)?;
            d.lambda = -d.lambda;
            d.v_star = v_d.iter().zip(&eval.lg_h).map(|(v, g)| v + d.lambda * g).collect();
            d.mu_star = eval.h * d.lambda / config.gamma;
            Ok(d)
        }
        let r = qp_suite(flipped, 6, 2000, 5).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failures, 6, "every active instance is caught");
    }

    #[test]
    fn suite_names() {
        assert_eq!(Suite::parse("all").unwrap().len(), 5);
        assert_eq!(Suite::parse("qp").unwrap(), vec![Suite::Qp]);
        assert!(Suite::parse("nope").is_err());
    }
}
