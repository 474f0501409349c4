//! Static obstacle maps and a simulated planar LiDAR.

pub(crate) mod map_file;

pub use map_file::{builtin_map, BUILTIN_MAPS};

use std::f64::consts::TAU;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector2<f64>;

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Circle {
        center: Point,
        radius: f64,
    },
    /// Strictly convex, counterclockwise.
    ConvexPolygon {
        vertices: Vec<Point>,
    },
}

impl Shape {
    pub fn circle(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::usage(format!("circle radius must be positive, got {radius}")));
        }
        Ok(Shape::Circle {
            center: Point::new(center[0], center[1]),
            radius,
        })
    }

    pub fn polygon(vertices: &[[f64; 2]]) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::usage(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        let pts: Vec<Point> = vertices.iter().map(|v| Point::new(v[0], v[1])).collect();
        let n = pts.len();
        for i in 0..n {
            let a = pts[i];
            let b = pts[(i + 1) % n];
            let c = pts[(i + 2) % n];
            let turn = cross(b - a, c - b);
            if turn <= 0.0 {
                return Err(Error::usage(format!(
                    "polygon must be strictly convex and counterclockwise (turn at vertex {} is {turn:.3e})",
                    (i + 1) % n
                )));
            }
        }
        // Strict left turns everywhere still admit a star that winds twice.
        let winding: f64 = (0..n)
            .map(|i| {
                let e0 = pts[(i + 1) % n] - pts[i];
                let e1 = pts[(i + 2) % n] - pts[(i + 1) % n];
                cross(e0, e1).atan2(e0.dot(&e1))
            })
            .sum();
        if (winding - TAU).abs() > 1e-6 {
            return Err(Error::usage("polygon edges wind more than once"));
        }
        Ok(Shape::ConvexPolygon { vertices: pts })
    }

    /// Strict interior test; boundary points are outside.
    pub fn contains(&self, p: Point) -> bool {
        match self {
            Shape::Circle { center, radius } => (p - center).norm_squared() < radius * radius,
            Shape::ConvexPolygon { vertices } => {
                let n = vertices.len();
                (0..n).all(|i| cross(vertices[(i + 1) % n] - vertices[i], p - vertices[i]) > 0.0)
            }
        }
    }
}

fn cross(a: Point, b: Point) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Workspace {
    pub fn contains(&self, p: Point) -> bool {
        (self.xmin..=self.xmax).contains(&p.x) && (self.ymin..=self.ymax).contains(&p.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleMap {
    pub workspace: Workspace,
    pub obstacles: Vec<Shape>,
}

impl ObstacleMap {
    pub fn empty(workspace: Workspace) -> Self {
        Self {
            workspace,
            obstacles: Vec::new(),
        }
    }

    /// Index of the first obstacle whose interior holds `p`.
    pub fn obstacle_at(&self, p: Point) -> Option<usize> {
        self.obstacles.iter().position(|s| s.contains(p))
    }

    /// Checks the precondition of a scan origin.
    pub fn check_free(&self, p: Point) -> Result<()> {
        if let Some(i) = self.obstacle_at(p) {
            return Err(Error::SimulationFault(format!(
                "position ({:.4}, {:.4}) is inside obstacle {i}",
                p.x, p.y
            )));
        }
        if !self.workspace.contains(p) {
            return Err(Error::SimulationFault(format!(
                "position ({:.4}, {:.4}) left the workspace",
                p.x, p.y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LidarConfig {
    /// Detection radius r̄ (m).
    pub max_range: f64,
    /// Maximum number of detections ℓ̄ per scan, one per ray.
    pub ray_count: usize,
    /// Angular coverage (rad), at most 2π.
    pub fov: f64,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self {
            max_range: 5.0,
            ray_count: 100,
            fov: TAU,
        }
    }
}

impl LidarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0 && self.max_range.is_finite()) {
            return Err(Error::usage("lidar.max_range must be positive"));
        }
        if self.ray_count == 0 {
            return Err(Error::usage("lidar.ray_count must be at least 1"));
        }
        if !(self.fov > 0.0 && self.fov <= TAU + 1e-12) {
            return Err(Error::usage("lidar.fov must lie in (0, 2π]"));
        }
        Ok(())
    }

    /// World-frame ray bearings `j·fov/ℓ̄`, `j = 0..ℓ̄`.
    pub fn bearings(&self) -> impl Iterator<Item = f64> + '_ {
        let step = self.fov / self.ray_count as f64;
        (0..self.ray_count).map(move |j| j as f64 * step)
    }
}

/// One polar detection relative to the scan origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub range: f64,
    pub bearing: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawScan {
    pub origin: Point,
    pub max_range: f64,
    pub detections: Vec<Detection>,
}

/// Distance along a unit-direction ray to the nearest boundary point of
/// `shape`, if any. Tangent rays count as hits.
pub fn ray_shape_intersection(origin: Point, direction: Point, shape: &Shape) -> Option<f64> {
    match shape {
        Shape::Circle { center, radius } => {
            let oc = origin - center;
            let b = oc.dot(&direction);
            let c = oc.norm_squared() - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            let near = -b - sq;
            let far = -b + sq;
            if near >= 0.0 {
                Some(near)
            } else if far >= 0.0 {
                Some(far)
            } else {
                None
            }
        }
        Shape::ConvexPolygon { vertices } => {
            let n = vertices.len();
            (0..n)
                .filter_map(|i| ray_segment(origin, direction, vertices[i], vertices[(i + 1) % n]))
                .min_by(f64::total_cmp)
        }
    }
}

fn ray_segment(origin: Point, dir: Point, a: Point, b: Point) -> Option<f64> {
    let edge = b - a;
    let to_a = a - origin;
    let denom = cross(dir, edge);
    if denom == 0.0 {
        if cross(to_a, dir) != 0.0 {
            return None;
        }
        // Collinear: the ray runs along the edge line.
        let ta = to_a.dot(&dir);
        let tb = (b - origin).dot(&dir);
        let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
        return if hi < 0.0 { None } else { Some(lo.max(0.0)) };
    }
    let t = cross(to_a, edge) / denom;
    let u = cross(to_a, dir) / denom;
    (t >= 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Simulated 360° scan from `origin`: one detection per ray whose nearest hit
/// lies within the detection radius.
pub fn cast_scan(map: &ObstacleMap, origin: Point, config: &LidarConfig) -> Result<RawScan> {
    map.check_free(origin)?;
    let detections = config
        .bearings()
        .filter_map(|bearing| {
            let dir = Point::new(bearing.cos(), bearing.sin());
            map.obstacles
                .iter()
                .filter_map(|s| ray_shape_intersection(origin, dir, s))
                .min_by(f64::total_cmp)
                .filter(|&r| r <= config.max_range)
                .map(|range| Detection { range, bearing })
        })
        .collect();
    Ok(RawScan {
        origin,
        max_range: config.max_range,
        detections,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws() -> Workspace {
        Workspace {
            xmin: -20.0,
            xmax: 20.0,
            ymin: -20.0,
            ymax: 20.0,
        }
    }

    fn square() -> Shape {
        Shape::polygon(&[[2.0, -1.0], [4.0, -1.0], [4.0, 1.0], [2.0, 1.0]]).unwrap()
    }

    #[test]
    fn ray_circle_cases() {
        let c = Shape::circle([3.0, 0.0], 1.0).unwrap();
        let o = Point::zeros();
        assert_eq!(ray_shape_intersection(o, Point::new(1.0, 0.0), &c), Some(2.0));
        assert_eq!(ray_shape_intersection(o, Point::new(0.0, 1.0), &c), None);
        assert_eq!(ray_shape_intersection(o, Point::new(-1.0, 0.0), &c), None);
        // Tangent ray grazes at (3, 1).
        let t = ray_shape_intersection(Point::new(0.0, 1.0), Point::new(1.0, 0.0), &c).unwrap();
        assert!((t - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ray_square_hits_near_edge() {
        let t = ray_shape_intersection(Point::zeros(), Point::new(1.0, 0.0), &square());
        assert_eq!(t, Some(2.0));
        // Along the bottom edge line.
        let t = ray_shape_intersection(Point::new(0.0, -1.0), Point::new(1.0, 0.0), &square());
        assert_eq!(t, Some(2.0));
        assert_eq!(
            ray_shape_intersection(Point::zeros(), Point::new(-1.0, 0.0), &square()),
            None
        );
    }

    #[test]
    fn polygon_validation() {
        assert!(Shape::polygon(&[[0.0, 0.0], [1.0, 0.0]]).is_err());
        // Clockwise.
        assert!(Shape::polygon(&[[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]).is_err());
        // Collinear vertex.
        assert!(Shape::polygon(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [1.0, 1.0]]).is_err());
        // Pentagram: left turns everywhere, winds twice.
        let star: Vec<[f64; 2]> = (0..5)
            .map(|i| {
                let a = (i * 2) as f64 * TAU / 5.0;
                [a.cos(), a.sin()]
            })
            .collect();
        assert!(Shape::polygon(&star).is_err());
        assert!(Shape::circle([0.0, 0.0], 0.0).is_err());
    }

    #[test]
    fn empty_map_has_no_detections() {
        let scan = cast_scan(&ObstacleMap::empty(ws()), Point::zeros(), &LidarConfig::default()).unwrap();
        assert!(scan.detections.is_empty());
    }

    #[test]
    fn collinear_circle_detected_at_two() {
        let map = ObstacleMap {
            workspace: ws(),
            obstacles: vec![Shape::circle([3.0, 0.0], 1.0).unwrap()],
        };
        let scan = cast_scan(&map, Point::zeros(), &LidarConfig::default()).unwrap();
        let d0 = scan.detections.iter().find(|d| d.bearing == 0.0).unwrap();
        assert_eq!(d0.range, 2.0);
        assert!(scan.detections.iter().all(|d| d.range <= 5.0));
        assert!(scan.detections.len() < 100);
    }

    #[test]
    fn distant_circle_not_detected() {
        let map = ObstacleMap {
            workspace: ws(),
            obstacles: vec![Shape::circle([10.0, 0.0], 1.0).unwrap()],
        };
        let scan = cast_scan(&map, Point::zeros(), &LidarConfig::default()).unwrap();
        assert!(scan.detections.is_empty());
    }

    #[test]
    fn origin_inside_obstacle_is_fault() {
        let map = ObstacleMap {
            workspace: ws(),
            obstacles: vec![Shape::circle([0.5, 0.0], 1.0).unwrap()],
        };
        let err = cast_scan(&map, Point::zeros(), &LidarConfig::default()).unwrap_err();
        assert!(matches!(err, Error::SimulationFault(_)));
    }

    #[test]
    fn bearings_are_uniform_in_world_frame() {
        let cfg = LidarConfig {
            ray_count: 4,
            ..LidarConfig::default()
        };
        let b: Vec<f64> = cfg.bearings().collect();
        assert_eq!(b, vec![0.0, TAU / 4.0, TAU / 2.0, 3.0 * TAU / 4.0]);
    }
}
