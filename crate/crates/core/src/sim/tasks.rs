//! Kinematic point-mass manipulation tasks sharing one state/action layout.
//!
//! A velocity-controlled hand moves in the plane and can shove a puck towards
//! a goal. State is `[puck - hand, goal - puck, puck velocity]`, action is the
//! commanded hand velocity in `[-1, 1]^2` scaled by the task's speed limit.
//! The three kinds differ in friction, restitution, hand reach and goal
//! placement.

use serde::{Deserialize, Serialize};

use super::EnvKind;
use crate::error::{check_dim, Error, Result};
use crate::mathkit::Matrix;
use crate::rng;
use rand::Rng;

pub const STATE_DIM: usize = 6;
pub const ACTION_DIM: usize = 2;
pub const HIDDEN: usize = 16;
pub const STEPS: usize = 100;
/// Layer shapes (inputs x outputs) of the shared policy architecture.
pub const POLICY_SHAPES: [(usize, usize); 2] = [(STATE_DIM, HIDDEN), (HIDDEN, ACTION_DIM)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: EnvKind,
    pub dt: f64,
    pub hand_speed: f64,
    /// Hand is confined to a disc of this radius around the origin.
    pub reach: f64,
    pub contact_radius: f64,
    pub restitution: f64,
    /// Per-step multiplicative velocity retention of the puck.
    pub retention: f64,
    pub puck: [f64; 2],
    pub goal: [f64; 2],
    /// Half-width of the uniform per-seed jitter on puck and goal.
    pub jitter: f64,
}

impl TaskSpec {
    pub fn new(kind: EnvKind) -> Result<Self> {
        let base = TaskSpec {
            kind,
            dt: 0.05,
            hand_speed: 0.5,
            reach: 1.0,
            contact_radius: 0.08,
            restitution: 0.0,
            retention: 0.8,
            puck: [0.3, 0.0],
            goal: [0.6, 0.3],
            jitter: 0.0,
        };
        Ok(match kind {
            EnvKind::Pusherlike => base,
            EnvKind::Throwerlike => TaskSpec {
                hand_speed: 1.5,
                reach: 0.45,
                restitution: 0.8,
                retention: 0.97,
                puck: [0.2, 0.1],
                goal: [1.1, 0.7],
                ..base
            },
            EnvKind::Strikerlike => TaskSpec {
                hand_speed: 1.0,
                reach: 0.6,
                restitution: 0.4,
                retention: 0.9,
                puck: [0.25, 0.05],
                goal: [0.85, 0.5],
                ..base
            },
            other => {
                return Err(Error::Parameter(format!("'{other}' is not a transfer task")));
            }
        })
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }
}

/// Two-layer tanh perceptron without biases; layer `l` is `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskPolicy {
    layers: Vec<Matrix>,
}

impl TaskPolicy {
    pub fn new(layers: Vec<Matrix>) -> Result<Self> {
        check_dim("policy layers", POLICY_SHAPES.len(), layers.len())?;
        for (l, &(i, o)) in layers.iter().zip(POLICY_SHAPES.iter()) {
            check_dim("layer inputs", i, l.rows())?;
            check_dim("layer outputs", o, l.cols())?;
        }
        Ok(Self { layers })
    }

    pub fn zeros() -> Self {
        Self {
            layers: POLICY_SHAPES.iter().map(|&(i, o)| Matrix::zeros(i, o)).collect(),
        }
    }

    pub fn n_params() -> usize {
        POLICY_SHAPES.iter().map(|(i, o)| i * o).sum()
    }

    pub fn from_flat(values: &[f64]) -> Result<Self> {
        check_dim("flat policy", Self::n_params(), values.len())?;
        let mut layers = Vec::new();
        let mut at = 0;
        for &(i, o) in &POLICY_SHAPES {
            layers.push(Matrix::from_vec(i, o, values[at..at + i * o].to_vec())?);
            at += i * o;
        }
        Ok(Self { layers })
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.as_slice().iter().copied()).collect()
    }

    pub fn layers(&self) -> &[Matrix] {
        &self.layers
    }

    pub fn act(&self, state: &[f64]) -> Vec<f64> {
        let mut x = state.to_vec();
        for l in &self.layers {
            let mut y = vec![0.0; l.cols()];
            for (i, xi) in x.iter().enumerate() {
                for (o, w) in l.row(i).iter().enumerate() {
                    y[o] += xi * w;
                }
            }
            x = y.into_iter().map(f64::tanh).collect();
        }
        x
    }
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn len(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

fn initial(spec: &TaskSpec, seed: u64) -> ([f64; 2], [f64; 2]) {
    if spec.jitter == 0.0 {
        return (spec.puck, spec.goal);
    }
    let mut r = rng::rng(seed);
    let mut j = |v: f64| v + r.random_range(-spec.jitter..=spec.jitter);
    ([j(spec.puck[0]), j(spec.puck[1])], [j(spec.goal[0]), j(spec.goal[1])])
}

/// Initial puck-goal distance for a seed.
pub fn initial_distance(spec: &TaskSpec, seed: u64) -> f64 {
    let (p, g) = initial(spec, seed);
    len(sub(g, p))
}

/// Roll out an arbitrary controller; returns the negative terminal puck-goal
/// distance.
pub fn rollout_with<F>(spec: &TaskSpec, seed: u64, mut controller: F) -> f64
where
    F: FnMut(&[f64; STATE_DIM]) -> [f64; 2],
{
    let (mut p, g) = initial(spec, seed);
    let mut h = [0.0, 0.0];
    let mut v = [0.0, 0.0];
    for _ in 0..STEPS {
        let d = sub(p, h);
        let e = sub(g, p);
        let a = controller(&[d[0], d[1], e[0], e[1], v[0], v[1]]);
        let mut vh = [0.0; 2];
        for i in 0..2 {
            let u = if a[i].is_finite() { a[i].clamp(-1.0, 1.0) } else { 0.0 };
            vh[i] = u * spec.hand_speed;
        }
        let mut nh = [h[0] + vh[0] * spec.dt, h[1] + vh[1] * spec.dt];
        let r = len(nh);
        if r > spec.reach {
            nh = [nh[0] * spec.reach / r, nh[1] * spec.reach / r];
            vh = [(nh[0] - h[0]) / spec.dt, (nh[1] - h[1]) / spec.dt];
        }
        h = nh;

        let d = sub(p, h);
        let dist = len(d);
        if dist < spec.contact_radius {
            let n = if dist > 1e-12 { [d[0] / dist, d[1] / dist] } else { [1.0, 0.0] };
            let hn = vh[0] * n[0] + vh[1] * n[1];
            let pn = v[0] * n[0] + v[1] * n[1];
            if hn > pn {
                // Infinitely heavy hand: the puck leaves at the hand's normal
                // speed plus a restitution share of the closing speed.
                let new_n = hn + spec.restitution * (hn - pn);
                v = [v[0] + (new_n - pn) * n[0], v[1] + (new_n - pn) * n[1]];
            }
            p = [h[0] + n[0] * spec.contact_radius, h[1] + n[1] * spec.contact_radius];
        }
        p = [p[0] + v[0] * spec.dt, p[1] + v[1] * spec.dt];
        v = [v[0] * spec.retention, v[1] * spec.retention];
    }
    -len(sub(g, p))
}

/// Return of `policy` on `spec` for the given seed.
pub fn transfer_task(spec: &TaskSpec, policy: &TaskPolicy, seed: u64) -> f64 {
    rollout_with(spec, seed, |s| {
        let a = policy.act(s);
        [a[0], a[1]]
    })
}
