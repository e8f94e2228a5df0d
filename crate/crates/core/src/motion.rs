//! Controller parameters, outcomes, and the cubic motion-primitive encoding.
//!
//! A controller is a flat vector of polynomial coefficients. Joint `j` follows
//! `q_j(t) = rest_j + a_j1 t + a_j2 t^2 + a_j3 t^3`, with the three free
//! coefficients of each joint stored consecutively (joint-major order).

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Free coefficients per joint.
pub const COEFFS_PER_JOINT: usize = 3;

/// Per-dimension box constraints on a controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ParamBounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_dim("bounds", lo.len(), hi.len())?;
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::Parameter("bounds must be finite with lo <= hi".into()));
        }
        Ok(Self { lo, hi })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Self {
        Self::new(vec![lo; dim], vec![hi; dim]).expect("uniform bounds")
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn range(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn contains(&self, values: &[f64]) -> bool {
        values.len() == self.dim()
            && values
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    pub fn project(&self, values: &mut [f64]) {
        for (v, (l, h)) in values.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| l + (h - l) * rng.random::<f64>())
            .collect()
    }
}

/// A controller parameter vector together with the bounds of its owning
/// environment. Values may lie outside the bounds until [`clamp`] is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    values: Vec<f64>,
    bounds: Arc<ParamBounds>,
}

impl ControllerParams {
    pub fn new(values: Vec<f64>, bounds: Arc<ParamBounds>) -> Result<Self> {
        check_dim("controller", bounds.dim(), values.len())?;
        Ok(Self { values, bounds })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> &Arc<ParamBounds> {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_within_bounds(&self) -> bool {
        self.bounds.contains(&self.values)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Same bounds, new values (clamped).
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Ok(clamp(&Self::new(values, self.bounds.clone())?))
    }
}

/// Project every value into its `[lo, hi]` interval.
pub fn clamp(theta: &ControllerParams) -> ControllerParams {
    let mut values = theta.values.clone();
    theta.bounds.project(&mut values);
    ControllerParams {
        values,
        bounds: theta.bounds.clone(),
    }
}

/// Effect of executing a controller. Invalid outcomes carry an all-zero
/// sentinel and are never archived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub values: Vec<f64>,
    pub valid: bool,
}

impl Outcome {
    pub fn valid(values: Vec<f64>) -> Self {
        Self { values, valid: true }
    }

    pub fn invalid(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            valid: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        euclidean(&self.values, other)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skill {
    pub params: ControllerParams,
    pub outcome: Outcome,
    pub quality: f64,
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Open-loop joint trajectory with cubic per-joint profiles.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    rest: Vec<f64>,
    coeffs: Vec<[f64; COEFFS_PER_JOINT]>,
    limits: Vec<(f64, f64)>,
    duration: f64,
}

/// Decode a flat controller into a trajectory starting at a zero rest pose,
/// with unlimited joints and a 1 s duration.
pub fn decode(theta: &ControllerParams, n_joints: usize) -> Result<JointTrajectory> {
    JointTrajectory::from_coefficients(theta.values(), n_joints)
}

/// Angles (clamped to joint limits) and velocities at time `t`.
pub fn eval_trajectory(traj: &JointTrajectory, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    traj.eval(t)
}

impl JointTrajectory {
    pub fn from_coefficients(values: &[f64], n_joints: usize) -> Result<Self> {
        check_dim("controller", COEFFS_PER_JOINT * n_joints, values.len())?;
        let coeffs = values
            .chunks_exact(COEFFS_PER_JOINT)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Self {
            rest: vec![0.0; n_joints],
            coeffs,
            limits: vec![(f64::NEG_INFINITY, f64::INFINITY); n_joints],
            duration: 1.0,
        })
    }

    pub fn with_rest(mut self, rest: &[f64]) -> Result<Self> {
        check_dim("rest pose", self.n_joints(), rest.len())?;
        self.rest = rest.to_vec();
        Ok(self)
    }

    pub fn with_limits(mut self, limits: &[(f64, f64)]) -> Result<Self> {
        check_dim("joint limits", self.n_joints(), limits.len())?;
        self.limits = limits.to_vec();
        Ok(self)
    }

    pub fn with_duration(mut self, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::Parameter(format!("duration must be positive, got {duration}")));
        }
        self.duration = duration;
        Ok(self)
    }

    pub fn n_joints(&self) -> usize {
        self.coeffs.len()
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn rest(&self) -> &[f64] {
        &self.rest
    }

    /// Free coefficients in joint-major order; inverse of decoding.
    pub fn flatten(&self) -> Vec<f64> {
        self.coeffs.iter().flatten().copied().collect()
    }

    /// Unclamped polynomial value.
    pub fn raw_angle(&self, joint: usize, t: f64) -> f64 {
        let [a1, a2, a3] = self.coeffs[joint];
        self.rest[joint] + t * (a1 + t * (a2 + t * a3))
    }

    pub fn raw_velocity(&self, joint: usize, t: f64) -> f64 {
        let [a1, a2, a3] = self.coeffs[joint];
        a1 + t * (2.0 * a2 + 3.0 * t * a3)
    }

    pub fn raw_acceleration(&self, joint: usize, t: f64) -> f64 {
        let [_, a2, a3] = self.coeffs[joint];
        2.0 * a2 + 6.0 * a3 * t
    }

    /// Angles and velocities at `t`, with `bias` added to every raw angle
    /// before the joint limits are applied. Clamped joints report zero velocity.
    pub fn eval_biased(&self, t: f64, bias: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_joints();
        let mut angles = Vec::with_capacity(n);
        let mut velocities = Vec::with_capacity(n);
        for j in 0..n {
            let raw = self.raw_angle(j, t) + bias.get(j).copied().unwrap_or(0.0);
            let (lo, hi) = self.limits[j];
            if raw < lo || raw > hi {
                angles.push(raw.clamp(lo, hi));
                velocities.push(0.0);
            } else {
                angles.push(raw);
                velocities.push(self.raw_velocity(j, t));
            }
        }
        (angles, velocities)
    }

    pub fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        const SLACK: f64 = 1e-12;
        if !(t >= -SLACK && t <= self.duration + SLACK) {
            return Err(Error::Parameter(format!(
                "time {t} outside [0, {}]",
                self.duration
            )));
        }
        Ok(self.eval_biased(t.clamp(0.0, self.duration), &[]))
    }

    /// Sum over joints of the integral of the squared raw acceleration over
    /// `[0, T]`, in closed form.
    pub fn squared_acceleration_integral(&self) -> f64 {
        let t = self.duration;
        self.coeffs
            .iter()
            .map(|&[_, a2, a3]| {
                4.0 * a2 * a2 * t + 12.0 * a2 * a3 * t * t + 12.0 * a3 * a3 * t * t * t
            })
            .sum()
    }
}
