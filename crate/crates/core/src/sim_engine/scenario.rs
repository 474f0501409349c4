//! Scenario files.
//!
//! A scenario is a TOML document whose sections mirror [`ScenarioConfig`].
//! Every key is optional; missing keys take the default profile, see
//! `scenarios/paper_goal_a.toml` for the full list.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cbf_composer::HocbfChainConfig;
use crate::environment::map_file::line_of;
use crate::environment::{builtin_map, LidarConfig, ObstacleMap};
use crate::error::{Error, Result};
use crate::perception_barrier::PerceptionConfig;
use crate::robot_model::{GoalSpec, RobotLimits};
use crate::safety_filter::{ControlDynamics, FilterConfig};
use crate::smooth_math::SharpnessParams;

/// Scenarios compiled into the binary, addressable by name.
pub const BUILTIN_SCENARIOS: &[(&str, &str)] = &[
    ("paper_goal_a", include_str!("../../scenarios/paper_goal_a.toml")),
    ("paper_goal_b", include_str!("../../scenarios/paper_goal_b.toml")),
    ("paper_goal_c", include_str!("../../scenarios/paper_goal_c.toml")),
    ("tracking", include_str!("../../scenarios/tracking.toml")),
    (
        "goal_in_obstacle",
        include_str!("../../scenarios/goal_in_obstacle.toml"),
    ),
];

pub fn builtin_scenario(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".toml").unwrap_or(name);
    BUILTIN_SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    /// `(qx, qy, v, θ)`.
    pub x: Vec<f64>,
    /// `(u1, u2)`.
    pub u: Vec<f64>,
}

impl Default for InitialState {
    fn default() -> Self {
        Self {
            x: vec![-1.0, -8.0, 0.0, std::f64::consts::FRAC_PI_2],
            u: vec![0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// `A_c`, row-major.
    pub a: Vec<Vec<f64>>,
    /// `B_c`, row-major.
    pub b: Vec<Vec<f64>>,
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            a: vec![vec![-1.0, 0.0], vec![0.0, -1.0]],
            b: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        }
    }
}

impl DynamicsConfig {
    pub fn build(&self) -> Result<ControlDynamics> {
        ControlDynamics::from_rows(&self.a, &self.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Logged `ψ₀`, `ξ_j`, `φ_j` and `h` may dip this far below zero.
    pub tolerance: f64,
    /// Side of the sampling grid used to look for overlap between
    /// consecutive perception frames.
    pub overlap_grid: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-2,
            overlap_grid: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Map file, relative to the scenario file, or the name of a bundled map.
    pub map: String,
    /// Seconds.
    pub horizon: f64,
    /// Hz.
    pub control_rate: f64,
    /// Seconds between scans, `T`.
    pub perception_period: f64,
    /// RK4 steps per control period.
    pub substeps: usize,
    /// Reserved; the pipeline is deterministic.
    pub seed: u64,
    /// End the run once the goal is within `reach_radius`.
    pub stop_on_arrival: bool,
    /// Meters.
    pub reach_radius: f64,
    pub initial: InitialState,
    pub goal: GoalSpec,
    pub limits: RobotLimits,
    pub sharpness: SharpnessParams,
    pub chain: HocbfChainConfig,
    pub filter: FilterConfig,
    pub dynamics: DynamicsConfig,
    pub lidar: LidarConfig,
    pub perception: PerceptionConfig,
    pub audit: AuditConfig,
}

impl Default for GoalSpec {
    fn default() -> Self {
        GoalSpec::new([6.0, 2.5])
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            map: "clutter.toml".into(),
            horizon: 60.0,
            control_rate: 100.0,
            perception_period: 0.2,
            substeps: 1,
            seed: 0,
            stop_on_arrival: true,
            reach_radius: 0.3,
            initial: InitialState::default(),
            goal: GoalSpec::default(),
            limits: RobotLimits::default(),
            sharpness: SharpnessParams::default(),
            chain: HocbfChainConfig::default(),
            filter: FilterConfig::default(),
            dynamics: DynamicsConfig::default(),
            lidar: LidarConfig::default(),
            perception: PerceptionConfig::default(),
            audit: AuditConfig::default(),
        }
    }
}

impl ScenarioConfig {
    /// Parses a scenario; `origin` only labels error messages.
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    /// Steps between perception updates.
    pub fn steps_per_frame(&self) -> usize {
        (self.control_rate * self.perception_period).round() as usize
    }

    pub fn control_period(&self) -> f64 {
        1.0 / self.control_rate
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::usage("horizon must be positive"));
        }
        if !(self.control_rate > 0.0 && self.perception_period > 0.0) {
            return Err(Error::usage("control_rate and perception_period must be positive"));
        }
        let ratio = self.control_rate * self.perception_period;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::usage(format!(
                "control_rate × perception_period must be a positive integer, got {ratio}"
            )));
        }
        if self.substeps == 0 {
            return Err(Error::usage("substeps must be at least 1"));
        }
        if !(self.reach_radius > 0.0) {
            return Err(Error::usage("reach_radius must be positive"));
        }
        if self.initial.x.len() != 4 || self.initial.u.len() != 2 {
            return Err(Error::usage("initial.x needs 4 entries and initial.u needs 2"));
        }
        if !self.initial.x.iter().chain(&self.initial.u).all(|v| v.is_finite()) {
            return Err(Error::usage("initial state must be finite"));
        }
        self.goal.validate()?;
        self.limits.validate()?;
        self.sharpness.validate()?;
        self.chain.validate()?;
        self.filter.validate()?;
        self.dynamics.build()?;
        self.lidar.validate()?;
        self.perception.validate(self.lidar.max_range)?;
        if !(self.audit.tolerance >= 0.0) {
            return Err(Error::usage("audit.tolerance must be nonnegative"));
        }
        Ok(())
    }

    /// Applies `key=value` with a dotted key, e.g. `filter.gamma=200`.
    /// The key must already exist; integers are accepted for float keys.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::usage(format!("override `{assignment}` is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let mut doc = toml::Table::try_from(&*self).map_err(|e| Error::usage(e.to_string()))?;

        let mut parts = key.split('.').peekable();
        let mut table = &mut doc;
        let slot = loop {
            let part = parts
                .next()
                .filter(|p| !p.is_empty())
                .ok_or_else(|| Error::usage(format!("bad override key `{key}`")))?;
            let entry = table
                .get_mut(part)
                .ok_or_else(|| Error::usage(format!("unknown override key `{key}`")))?;
            if parts.peek().is_none() {
                break entry;
            }
            table = entry
                .as_table_mut()
                .ok_or_else(|| Error::usage(format!("unknown override key `{key}`")))?;
        };

        let value = parse_value(raw);
        *slot = match (&*slot, value) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (toml::Value::Array(_), toml::Value::Array(items)) => toml::Value::Array(
                items
                    .into_iter()
                    .map(|v| match v {
                        toml::Value::Integer(i) => toml::Value::Float(i as f64),
                        other => other,
                    })
                    .collect(),
            ),
            (_, v) => v,
        };
        *self = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::usage(format!("override `{assignment}`: {}", e.message())))?;
        Ok(())
    }

    /// Resolves the map reference against `base_dir`, falling back to the
    /// bundled maps by file name.
    pub fn resolve_map(&self, base_dir: &Path) -> Result<(PathBuf, ObstacleMap)> {
        let path = base_dir.join(&self.map);
        if path.is_file() {
            return Ok((path.clone(), ObstacleMap::load(&path)?));
        }
        let file_name = Path::new(&self.map).file_name().and_then(|n| n.to_str()).unwrap_or("");
        match builtin_map(file_name) {
            Some(text) => Ok((
                PathBuf::from(&self.map),
                ObstacleMap::from_toml_str(text, Path::new(&self.map))?,
            )),
            None => Err(Error::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "map file not found"),
            )),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// A scenario together with the directory its relative paths refer to.
#[derive(Debug, Clone)]
pub struct ScenarioSource {
    pub config: ScenarioConfig,
    pub base_dir: PathBuf,
    pub label: String,
}

impl ScenarioSource {
    /// Loads a scenario file, or a bundled scenario by name.
    pub fn open(reference: &str) -> Result<Self> {
        let path = Path::new(reference);
        if path.is_file() {
            let mut config = ScenarioConfig::load(path)?;
            if config.name.is_empty() || config.name == ScenarioConfig::default().name {
                config.name = path
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or(reference)
                    .to_string();
            }
            return Ok(Self {
                config,
                base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
                label: reference.to_string(),
            });
        }
        match builtin_scenario(reference) {
            Some(text) => Ok(Self {
                config: ScenarioConfig::from_toml_str(text, Path::new(reference))?,
                base_dir: PathBuf::from("."),
                label: reference.to_string(),
            }),
            None => Err(Error::io(
                path,
                std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "no such scenario file or bundled scenario",
                ),
            )),
        }
    }
}
