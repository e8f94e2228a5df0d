//! Forward kinematics of the yaw + planar-chain arm.

use super::{EnvironmentSpec, RealityGap};
use crate::motion::JointTrajectory;

/// Gripper position and linear velocity in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmPose {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

/// Joint angles `q` (yaw first) and rates `qd` to the gripper pose. The
/// in-plane angle of link `k` is the cumulative sum of pitch joints `1..=k`,
/// measured from the horizontal.
pub(crate) fn forward(links: &[f64], base_height: f64, q: &[f64], qd: &[f64]) -> ArmPose {
    let (mut r, mut z, mut rd, mut zd) = (0.0, base_height, 0.0, 0.0);
    let (mut phi, mut phid) = (0.0, 0.0);
    for (k, len) in links.iter().enumerate() {
        phi += q[k + 1];
        phid += qd[k + 1];
        let (s, c) = phi.sin_cos();
        r += len * c;
        z += len * s;
        rd -= len * s * phid;
        zd += len * c * phid;
    }
    let (sy, cy) = q[0].sin_cos();
    let yd = qd[0];
    ArmPose {
        position: [r * cy, r * sy, z],
        velocity: [rd * cy - r * sy * yd, rd * sy + r * cy * yd, zd],
    }
}

/// Shoulder column base, shoulder, every joint and the gripper.
pub(crate) fn joint_points(links: &[f64], base_height: f64, q: &[f64]) -> Vec<[f64; 3]> {
    let (sy, cy) = q[0].sin_cos();
    let mut pts = vec![[0.0, 0.0, 0.0], [0.0, 0.0, base_height]];
    let (mut r, mut z, mut phi) = (0.0, base_height, 0.0);
    for (k, len) in links.iter().enumerate() {
        phi += q[k + 1];
        r += len * phi.cos();
        z += len * phi.sin();
        pts.push([r * cy, r * sy, z]);
    }
    pts
}

pub(crate) fn scaled_links(spec: &EnvironmentSpec, gap: &RealityGap) -> Vec<f64> {
    spec.link_lengths.iter().map(|l| l * gap.link_scale).collect()
}

pub(crate) fn pose(spec: &EnvironmentSpec, gap: &RealityGap, traj: &JointTrajectory, t: f64) -> ArmPose {
    let bias = gap.bias(traj.n_joints());
    let (q, qd) = traj.eval_biased(t, &bias);
    forward(&scaled_links(spec, gap), spec.base_height, &q, &qd)
}
