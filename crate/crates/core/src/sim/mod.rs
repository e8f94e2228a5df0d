//! Deterministic analytic environments.
//!
//! The throw and joystick environments map a 15-D controller to a 2-D
//! outcome through a five-joint arm (base yaw plus four in-plane pitch
//! joints) with closed-form kinematics. All geometry is a desk-scale
//! stand-in for a physical robot and is exposed through [`EnvironmentSpec`].

mod arm;
pub mod linear;
pub mod reach;
pub mod tasks;
mod throw;

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::motion::{ControllerParams, JointTrajectory, Outcome, ParamBounds, COEFFS_PER_JOINT};

pub use arm::ArmPose;
pub use throw::segment_hits_box;

/// A black-box mapping from controller parameters to outcomes.
pub trait Environment: Send + Sync {
    fn name(&self) -> &str;

    fn bounds(&self) -> Arc<ParamBounds>;

    fn param_dim(&self) -> usize {
        self.bounds().dim()
    }

    fn outcome_dim(&self) -> usize;

    fn execute(&self, gap: &RealityGap, theta: &ControllerParams) -> Result<Outcome>;

    /// Higher is better. `seed` drives any stochastic re-execution.
    fn quality(&self, theta: &ControllerParams, outcome: &Outcome, seed: u64) -> f64;

    /// Default archive novelty radius in outcome units.
    fn novelty_radius(&self) -> f64;

    /// Default hit tolerance for adaptation, in outcome units.
    fn tolerance(&self) -> f64;

    fn execute_nominal(&self, theta: &ControllerParams) -> Result<Outcome> {
        self.execute(&RealityGap::nominal(), theta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Throw,
    Joystick,
    Reach2d,
    Pusherlike,
    Throwerlike,
    Strikerlike,
}

impl EnvKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvKind::Throw => "throw",
            EnvKind::Joystick => "joystick",
            EnvKind::Reach2d => "reach2d",
            EnvKind::Pusherlike => "pusherlike",
            EnvKind::Throwerlike => "throwerlike",
            EnvKind::Strikerlike => "strikerlike",
        }
    }

    /// Controller and outcome dimensions (D, d) for primitive-driven kinds.
    pub fn dims(self) -> Option<(usize, usize)> {
        match self {
            EnvKind::Throw | EnvKind::Joystick => Some((15, 2)),
            _ => None,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "throw" => EnvKind::Throw,
            "joystick" => EnvKind::Joystick,
            "reach2d" => EnvKind::Reach2d,
            "pusherlike" => EnvKind::Pusherlike,
            "throwerlike" => EnvKind::Throwerlike,
            "strikerlike" => EnvKind::Strikerlike,
            other => return Err(Error::Parameter(format!("unknown environment kind '{other}'"))),
        })
    }
}

/// Systematic discrepancy applied at execution time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealityGap {
    pub gravity_scale: f64,
    /// Per-joint angle offset in radians; empty means all zero.
    pub joint_bias: Vec<f64>,
    pub link_scale: f64,
}

impl RealityGap {
    pub fn nominal() -> Self {
        Self {
            gravity_scale: 1.0,
            joint_bias: Vec::new(),
            link_scale: 1.0,
        }
    }

    /// Same bias on each of `n_joints` joints.
    pub fn uniform(gravity_scale: f64, bias: f64, n_joints: usize) -> Self {
        Self {
            gravity_scale,
            joint_bias: vec![bias; n_joints],
            link_scale: 1.0,
        }
    }

    pub fn is_nominal(&self) -> bool {
        self.gravity_scale == 1.0 && self.link_scale == 1.0 && self.joint_bias.iter().all(|b| *b == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gravity_scale > 0.0) || !(self.link_scale > 0.0) {
            return Err(Error::Parameter("gravity_scale and link_scale must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn bias(&self, n: usize) -> Vec<f64> {
        if self.joint_bias.is_empty() {
            vec![0.0; n]
        } else {
            self.joint_bias.clone()
        }
    }
}

impl Default for RealityGap {
    fn default() -> Self {
        Self::nominal()
    }
}

/// Axis-aligned box obstacle (a wall when one extent is thin).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 3],
    /// Full extents along x, y, z in meters.
    pub size: [f64; 3],
}

impl Obstacle {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        if size.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Parameter("obstacle extents must be positive".into()));
        }
        Ok(Self { center, size })
    }

    pub fn min(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.center[i] - 0.5 * self.size[i])
    }

    pub fn max(&self) -> [f64; 3] {
        std::array::from_fn(|i| self.center[i] + 0.5 * self.size[i])
    }

    pub fn translated(&self, offset: [f64; 3]) -> Self {
        Self {
            center: std::array::from_fn(|i| self.center[i] + offset[i]),
            size: self.size,
        }
    }
}

/// Joystick stand-in: a stick whose top sits at `center`; the gripper moves
/// it by entering the interaction sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JoystickGeometry {
    pub center: [f64; 3],
    pub radius: f64,
    /// Response gain on horizontal push displacement (1/m).
    pub gain: f64,
    /// Saturation angle in radians.
    pub max_angle: f64,
}

impl Default for JoystickGeometry {
    fn default() -> Self {
        Self {
            center: [0.62, 0.0, 0.55],
            radius: 0.12,
            gain: 1.0 / 0.12,
            max_angle: 30f64.to_radians(),
        }
    }
}

/// Geometry and physics of one environment. Readable from a flat TOML
/// key-value file; every field has a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentSpec {
    pub kind: EnvKind,
    /// In-plane link lengths (m), shoulder to gripper.
    pub link_lengths: Vec<f64>,
    /// Height of the shoulder above the ground (m).
    pub base_height: f64,
    /// Rest pose: base yaw followed by the in-plane joints (rad).
    pub rest_pose: Vec<f64>,
    /// Joint limits (rad), same order as `rest_pose`.
    pub joint_limits: Vec<(f64, f64)>,
    /// Controller coefficients are bounded to `[-coeff_bound, coeff_bound]`.
    pub coeff_bound: f64,
    /// Abort (invalid outcome) any motion that commands a joint past its
    /// limits or brings the arm below the floor.
    pub safety_stop: bool,
    /// Trajectory duration; the ball is released at the end (s).
    pub duration: f64,
    pub gravity: f64,
    /// Sampling step for contact and collision checks (s).
    pub step: f64,
    pub joystick: JoystickGeometry,
    /// Parameter noise for the joystick robustness quality, as a fraction
    /// of each parameter's range.
    pub perturbation_sigma: f64,
    pub robustness_samples: usize,
    pub novelty_radius: f64,
    pub tolerance: f64,
    #[serde(skip)]
    bounds: OnceLock<Arc<ParamBounds>>,
}

impl Default for EnvironmentSpec {
    fn default() -> Self {
        Self::throw()
    }
}

impl PartialEq for EnvironmentSpec {
    fn eq(&self, other: &Self) -> bool {
        serde_json::to_value(self).ok() == serde_json::to_value(other).ok()
    }
}

impl EnvironmentSpec {
    pub fn throw() -> Self {
        Self {
            kind: EnvKind::Throw,
            link_lengths: vec![0.4, 0.35, 0.2, 0.1],
            base_height: 0.2,
            rest_pose: vec![0.0, 0.5, -1.2, 0.4, 0.3],
            joint_limits: vec![
                (-1.6, 1.6),
                (-0.8, 1.8),
                (-2.6, 0.4),
                (-1.4, 1.8),
                (-1.4, 1.8),
            ],
            coeff_bound: 2.0,
            safety_stop: true,
            duration: 1.0,
            gravity: 9.81,
            step: 0.01,
            joystick: JoystickGeometry::default(),
            perturbation_sigma: 0.02,
            robustness_samples: 5,
            novelty_radius: 0.05,
            tolerance: 0.05,
            bounds: OnceLock::new(),
        }
    }

    pub fn joystick() -> Self {
        Self {
            kind: EnvKind::Joystick,
            base_height: 1.0,
            novelty_radius: 1f64.to_radians(),
            tolerance: 2f64.to_radians(),
            ..Self::throw()
        }
    }

    pub fn for_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Joystick => Self::joystick(),
            other => Self {
                kind: other,
                ..Self::throw()
            },
        }
    }

    /// Parse a flat TOML document. Missing keys fall back to the defaults of
    /// the document's `kind` (throw if absent).
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse {
                line: toml_line(text, e.span()),
                msg: e.message().to_string(),
            })?;
        let kind: EnvKind = match table.get("kind") {
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::Parameter("kind must be a string".into()))?
                .parse()?,
            None => EnvKind::Throw,
        };
        let mut base = serde_json::to_value(Self::for_kind(kind)).expect("serializable");
        let overrides = serde_json::to_value(&table).map_err(|e| Error::Parameter(e.to_string()))?;
        merge_json(&mut base, overrides);
        let spec: Self = serde_json::from_value(base).map_err(|e| Error::Parameter(format!("environment config: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.link_lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Parameter("link lengths must be positive".into()));
        }
        if !(self.step > 0.0) || !(self.duration > 0.0) || !(self.gravity > 0.0) {
            return Err(Error::Parameter("step, duration and gravity must be positive".into()));
        }
        check_dim("rest pose", self.link_lengths.len() + 1, self.rest_pose.len())?;
        check_dim("joint limits", self.rest_pose.len(), self.joint_limits.len())?;
        if !(self.coeff_bound > 0.0) {
            return Err(Error::Parameter("coeff_bound must be positive".into()));
        }
        Ok(())
    }

    pub fn n_joints(&self) -> usize {
        self.rest_pose.len()
    }

    pub fn trajectory(&self, theta: &ControllerParams) -> Result<JointTrajectory> {
        JointTrajectory::from_coefficients(theta.values(), self.n_joints())?
            .with_rest(&self.rest_pose)?
            .with_limits(&self.joint_limits)?
            .with_duration(self.duration)
    }

    pub fn params(&self, values: Vec<f64>) -> Result<ControllerParams> {
        ControllerParams::new(values, self.bounds())
    }

    fn require_primitive(&self) -> Result<()> {
        match self.kind {
            EnvKind::Throw | EnvKind::Joystick => Ok(()),
            other => Err(Error::Parameter(format!(
                "environment kind '{other}' is not driven by motion primitives"
            ))),
        }
    }

    /// Whether the arm sweep or the ballistic path of `theta` intersects
    /// `obstacle` under nominal conditions.
    pub fn collides(&self, theta: &ControllerParams, obstacle: &Obstacle) -> Result<bool> {
        self.require_primitive()?;
        throw::collides(self, &RealityGap::nominal(), theta, obstacle)
    }

    /// Gripper position and velocity at release (t = T) under `gap`.
    pub fn release_state(&self, gap: &RealityGap, theta: &ControllerParams) -> Result<ArmPose> {
        self.require_primitive()?;
        let traj = self.trajectory(theta)?;
        Ok(arm::pose(self, gap, &traj, self.duration))
    }
}

impl Environment for EnvironmentSpec {
    fn name(&self) -> &str {
        self.kind.as_str()
    }

    fn bounds(&self) -> Arc<ParamBounds> {
        self.bounds
            .get_or_init(|| {
                Arc::new(ParamBounds::uniform(
                    COEFFS_PER_JOINT * self.n_joints(),
                    -self.coeff_bound,
                    self.coeff_bound,
                ))
            })
            .clone()
    }

    fn outcome_dim(&self) -> usize {
        2
    }

    fn execute(&self, gap: &RealityGap, theta: &ControllerParams) -> Result<Outcome> {
        self.require_primitive()?;
        gap.validate()?;
        if !gap.joint_bias.is_empty() {
            check_dim("joint bias", self.n_joints(), gap.joint_bias.len())?;
        }
        match self.kind {
            EnvKind::Throw => throw::execute_throw(self, gap, theta),
            _ => throw::execute_joystick(self, gap, theta),
        }
    }

    fn quality(&self, theta: &ControllerParams, outcome: &Outcome, seed: u64) -> f64 {
        match self.kind {
            EnvKind::Joystick => throw::robustness(self, theta, outcome, seed),
            _ => self
                .trajectory(theta)
                .map(|t| -t.squared_acceleration_integral())
                .unwrap_or(f64::NEG_INFINITY),
        }
    }

    fn novelty_radius(&self) -> f64 {
        self.novelty_radius
    }

    fn tolerance(&self) -> f64 {
        self.tolerance
    }
}

fn merge_json(base: &mut serde_json::Value, overrides: serde_json::Value) {
    match (base, overrides) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn toml_line(text: &str, span: Option<std::ops::Range<usize>>) -> usize {
    span.map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1)
}
