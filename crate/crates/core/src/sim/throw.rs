//! Ball throwing and joystick pushing on the shared arm model.

use rand_distr::{Distribution, Normal};

use super::arm::{self, ArmPose};
use super::{Environment, EnvironmentSpec, Obstacle, RealityGap};
use crate::error::Result;
use crate::motion::{ControllerParams, JointTrajectory, Outcome};
use crate::rng;

/// Time until a projectile released at height `z` with vertical velocity
/// `vz` reaches the ground plane, or `None` if released below it.
pub(crate) fn time_to_ground(z: f64, vz: f64, g: f64) -> Option<f64> {
    if z < 0.0 {
        return None;
    }
    Some((vz + (vz * vz + 2.0 * g * z).sqrt()) / g)
}

pub(crate) fn landing(release: &ArmPose, g: f64) -> Option<[f64; 2]> {
    let [x, y, z] = release.position;
    let [vx, vy, vz] = release.velocity;
    time_to_ground(z, vz, g).map(|t| [x + vx * t, y + vy * t])
}

pub(crate) fn execute_throw(spec: &EnvironmentSpec, gap: &RealityGap, theta: &ControllerParams) -> Result<Outcome> {
    let traj = spec.trajectory(theta)?;
    if spec.safety_stop && motion_aborted(spec, gap, &traj) {
        return Ok(Outcome::invalid(2));
    }
    let release = arm::pose(spec, gap, &traj, spec.duration);
    Ok(match landing(&release, spec.gravity * gap.gravity_scale) {
        Some(p) => Outcome::valid(p.to_vec()),
        None => Outcome::invalid(2),
    })
}

/// True if the commanded motion drives a joint past its limit or lowers any
/// joint beyond the shoulder below the floor at some sampled instant.
pub(crate) fn motion_aborted(spec: &EnvironmentSpec, gap: &RealityGap, traj: &JointTrajectory) -> bool {
    let links = arm::scaled_links(spec, gap);
    let bias = gap.bias(traj.n_joints());
    let n = (spec.duration / spec.step).round().max(1.0) as usize;
    (0..=n).any(|i| {
        let t = spec.duration * i as f64 / n as f64;
        let out_of_range = (0..traj.n_joints()).any(|j| {
            let raw = traj.raw_angle(j, t) + bias.get(j).copied().unwrap_or(0.0);
            let (lo, hi) = spec.joint_limits[j];
            raw < lo || raw > hi
        });
        if out_of_range {
            return true;
        }
        let (q, _) = traj.eval_biased(t, &bias);
        arm::joint_points(&links, spec.base_height, &q)[2..].iter().any(|p| p[2] < 0.0)
    })
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

pub(crate) fn execute_joystick(spec: &EnvironmentSpec, gap: &RealityGap, theta: &ControllerParams) -> Result<Outcome> {
    let traj = spec.trajectory(theta)?;
    if spec.safety_stop && motion_aborted(spec, gap, &traj) {
        return Ok(Outcome::invalid(2));
    }
    let js = &spec.joystick;
    let position = |t: f64| arm::pose(spec, gap, &traj, t).position;
    let dist = |t: f64| distance(&position(t), &js.center);

    let n = (spec.duration / spec.step).round().max(1.0) as usize;
    let times: Vec<f64> = (0..=n).map(|i| spec.duration * i as f64 / n as f64).collect();
    let dists: Vec<f64> = times.iter().map(|&t| dist(t)).collect();

    let Some(deep) = (0..=n)
        .filter(|&i| dists[i] < js.radius)
        .min_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)))
    else {
        return Ok(Outcome::valid(vec![0.0, 0.0]));
    };

    // Entry of the contact episode that contains the deepest sample.
    let mut first = deep;
    while first > 0 && dists[first - 1] < js.radius {
        first -= 1;
    }
    let t_entry = if first == 0 {
        0.0
    } else {
        let (mut lo, mut hi) = (times[first - 1], times[first]);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if dist(mid) < js.radius {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };

    // Golden-section refinement of the closest approach.
    let mut a = times[deep.saturating_sub(1)];
    let mut b = times[(deep + 1).min(n)];
    let gr = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..40 {
        let c = b - gr * (b - a);
        let d = a + gr * (b - a);
        if dist(c) < dist(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let t_deep = if dist(0.5 * (a + b)) < dists[deep] { 0.5 * (a + b) } else { times[deep] };

    let p_entry = position(t_entry);
    let p_deep = position(t_deep);
    let response = |delta: f64| js.max_angle * (js.gain * delta).clamp(-1.0, 1.0);
    Ok(Outcome::valid(vec![
        response(p_deep[0] - p_entry[0]),
        response(p_deep[1] - p_entry[1]),
    ]))
}

/// Negative mean outcome deviation over noisy re-executions.
pub(crate) fn robustness(spec: &EnvironmentSpec, theta: &ControllerParams, outcome: &Outcome, seed: u64) -> f64 {
    let bounds = spec.bounds();
    let mut rng = rng::rng(seed);
    let miss_penalty = 2.0 * spec.joystick.max_angle * std::f64::consts::SQRT_2;
    let m = spec.robustness_samples.max(1);
    let mut total = 0.0;
    for _ in 0..m {
        let values: Vec<f64> = theta
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let sd = spec.perturbation_sigma * bounds.range(i);
                v + Normal::new(0.0, sd.max(1e-300)).expect("positive sd").sample(&mut rng)
            })
            .collect();
        let perturbed = crate::motion::clamp(&ControllerParams::new(values, bounds.clone()).expect("same dim"));
        total += match spec.execute_nominal(&perturbed) {
            Ok(o) if o.valid => o.distance(&outcome.values),
            _ => miss_penalty,
        };
    }
    -total / m as f64
}

/// Slab test for segment `p0 -> p1` against the closed box `[lo, hi]`.
pub fn segment_hits_box(p0: [f64; 3], p1: [f64; 3], lo: [f64; 3], hi: [f64; 3]) -> bool {
    let (mut tmin, mut tmax) = (0.0f64, 1.0f64);
    for i in 0..3 {
        let d = p1[i] - p0[i];
        if d.abs() < 1e-15 {
            if p0[i] < lo[i] || p0[i] > hi[i] {
                return false;
            }
        } else {
            let t1 = (lo[i] - p0[i]) / d;
            let t2 = (hi[i] - p0[i]) / d;
            tmin = tmin.max(t1.min(t2));
            tmax = tmax.min(t1.max(t2));
            if tmin > tmax {
                return false;
            }
        }
    }
    true
}

fn arm_sweep_hits(spec: &EnvironmentSpec, gap: &RealityGap, traj: &JointTrajectory, ob: &Obstacle) -> bool {
    let (lo, hi) = (ob.min(), ob.max());
    let links = arm::scaled_links(spec, gap);
    let bias = gap.bias(traj.n_joints());
    let n = (spec.duration / spec.step).round().max(1.0) as usize;
    (0..=n).any(|i| {
        let t = spec.duration * i as f64 / n as f64;
        let (q, _) = traj.eval_biased(t, &bias);
        let pts = arm::joint_points(&links, spec.base_height, &q);
        pts.windows(2).any(|w| segment_hits_box(w[0], w[1], lo, hi))
    })
}

fn flight_hits(release: &ArmPose, g: f64, step: f64, ob: &Obstacle) -> bool {
    let Some(t_land) = time_to_ground(release.position[2], release.velocity[2], g) else {
        return false;
    };
    let at = |t: f64| -> [f64; 3] {
        let [x, y, z] = release.position;
        let [vx, vy, vz] = release.velocity;
        [x + vx * t, y + vy * t, z + vz * t - 0.5 * g * t * t]
    };
    let (lo, hi) = (ob.min(), ob.max());
    let mut t0 = 0.0;
    loop {
        let t1 = (t0 + step).min(t_land);
        if segment_hits_box(at(t0), at(t1), lo, hi) {
            return true;
        }
        if t1 >= t_land {
            return false;
        }
        t0 = t1;
    }
}

pub(crate) fn collides(spec: &EnvironmentSpec, gap: &RealityGap, theta: &ControllerParams, ob: &Obstacle) -> Result<bool> {
    let traj = spec.trajectory(theta)?;
    if arm_sweep_hits(spec, gap, &traj, ob) {
        return Ok(true);
    }
    let release = arm::pose(spec, gap, &traj, spec.duration);
    Ok(flight_hits(&release, spec.gravity * gap.gravity_scale, spec.step, ob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::EnvKind;

    fn zero_theta(spec: &EnvironmentSpec) -> ControllerParams {
        spec.params(vec![0.0; 15]).unwrap()
    }

    #[test]
    fn zero_controller_drops_ball_below_gripper() {
        let spec = EnvironmentSpec::throw();
        let theta = zero_theta(&spec);
        let rest = spec.release_state(&RealityGap::nominal(), &theta).unwrap();
        let out = spec.execute_nominal(&theta).unwrap();
        assert!(out.valid);
        assert_eq!(out.values, vec![rest.position[0], rest.position[1]]);
    }

    #[test]
    fn closed_form_projectile() {
        let release = ArmPose {
            position: [0.0, 0.0, 1.0],
            velocity: [1.0, 0.0, 0.0],
        };
        let t = time_to_ground(1.0, 0.0, 9.81).unwrap();
        let expected_t = (2.0f64 / 9.81).sqrt();
        assert!((t - expected_t).abs() < 1e-12);
        assert!((expected_t - 0.4515).abs() < 1e-4);
        let p = landing(&release, 9.81).unwrap();
        assert!((p[0] - expected_t).abs() < 1e-12);
        assert_eq!(p[1], 0.0);
        assert!(time_to_ground(-0.1, 5.0, 9.81).is_none());
    }

    #[test]
    fn landing_matches_direct_kinematics() {
        let spec = EnvironmentSpec::throw();
        let theta = spec
            .params(vec![0.3, -0.2, 0.1, 0.5, 0.2, -0.1, -0.3, 0.4, 0.0, 0.2, 0.1, -0.2, 0.0, 0.3, 0.1])
            .unwrap();
        let rel = spec.release_state(&RealityGap::nominal(), &theta).unwrap();
        let out = spec.execute_nominal(&theta).unwrap();
        let g = spec.gravity;
        let [_, _, z] = rel.position;
        let vz = rel.velocity[2];
        let t = (vz + (vz * vz + 2.0 * g * z).sqrt()) / g;
        assert!((out.values[0] - (rel.position[0] + rel.velocity[0] * t)).abs() < 1e-9);
        assert!((out.values[1] - (rel.position[1] + rel.velocity[1] * t)).abs() < 1e-9);
        // ground reached exactly
        assert!((z + vz * t - 0.5 * g * t * t).abs() < 1e-9);
    }

    #[test]
    fn execute_is_deterministic_and_nominal_is_identity() {
        let spec = EnvironmentSpec::throw();
        let theta = spec.params(vec![0.2; 15]).unwrap();
        let a = spec.execute_nominal(&theta).unwrap();
        let b = spec.execute(&RealityGap::uniform(1.0, 0.0, 5), &theta).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, spec.execute_nominal(&theta).unwrap());
        let gapped = spec.execute(&RealityGap::uniform(1.1, 0.05, 5), &theta).unwrap();
        assert_ne!(a, gapped);
    }

    #[test]
    fn joystick_without_contact_reads_zero() {
        let mut spec = EnvironmentSpec::joystick();
        spec.joystick.center = [5.0, 5.0, 5.0];
        let theta = spec.params(vec![0.4; 15]).unwrap();
        let out = spec.execute_nominal(&theta).unwrap();
        assert_eq!(out, Outcome::valid(vec![0.0, 0.0]));
    }

    #[test]
    fn joystick_outcome_is_bounded() {
        let spec = EnvironmentSpec::joystick();
        let mut r = rng::rng(1);
        let b = spec.bounds();
        let mut touched = 0;
        for _ in 0..300 {
            // Small motions around the rest pose stay valid and often touch.
            let v: Vec<f64> = b.sample(&mut r).iter().map(|x| 0.3 * x).collect();
            let out = spec.execute_nominal(&spec.params(v).unwrap()).unwrap();
            if !out.valid {
                continue;
            }
            assert!(out.values.iter().all(|v| v.abs() <= spec.joystick.max_angle + 1e-12));
            if out.values != [0.0, 0.0] {
                touched += 1;
            }
        }
        assert!(touched > 0);
    }

    #[test]
    fn quality_examples() {
        let spec = EnvironmentSpec::throw();
        let zero = zero_theta(&spec);
        let o = spec.execute_nominal(&zero).unwrap();
        assert_eq!(spec.quality(&zero, &o, 0), 0.0);
        let mut lin = vec![0.0; 15];
        lin[3] = 1.0;
        let lin = spec.params(lin).unwrap();
        assert_eq!(spec.quality(&lin, &o, 0), 0.0);
        let mut quad = vec![0.0; 15];
        quad[4] = 1.0;
        let quad = spec.params(quad).unwrap();
        assert!((spec.quality(&quad, &o, 0) + 4.0).abs() < 1e-12);
    }

    #[test]
    fn joystick_quality_is_seeded() {
        let spec = EnvironmentSpec::joystick();
        let theta = spec.params(vec![0.1; 15]).unwrap();
        let o = spec.execute_nominal(&theta).unwrap();
        assert_eq!(spec.quality(&theta, &o, 4), spec.quality(&theta, &o, 4));
        assert!(spec.quality(&theta, &o, 4) <= 0.0);
    }

    #[test]
    fn segment_box_oracle() {
        let lo = [-0.1, -1.0, 0.0];
        let hi = [0.1, 1.0, 1.0];
        assert!(segment_hits_box([-1.0, 0.0, 0.5], [1.0, 0.0, 0.5], lo, hi));
        assert!(!segment_hits_box([-1.0, 0.0, 1.5], [1.0, 0.0, 1.5], lo, hi));
        assert!(!segment_hits_box([-1.0, 0.0, 0.5], [-0.5, 0.0, 0.5], lo, hi));
        assert!(segment_hits_box([0.0, 0.0, 0.5], [0.0, 0.0, 0.5], lo, hi));
    }

    #[test]
    fn ballistic_path_through_wall_center() {
        let release = ArmPose {
            position: [0.0, 0.0, 1.0],
            velocity: [3.0, 0.0, 0.0],
        };
        // x(t) = 3t; at the wall x = 0.9 the ball is at z = 1 - 0.5 g 0.09 ~ 0.9559.
        let z_at_wall = 1.0 - 0.5 * 9.81 * 0.09;
        let wall = Obstacle::new([0.9, 0.0, z_at_wall], [0.05, 0.5, 0.2]).unwrap();
        assert!(flight_hits(&release, 9.81, 0.01, &wall));
        assert!(!flight_hits(&release, 9.81, 0.01, &wall.translated([0.0, 0.0, 10.0])));
    }

    #[test]
    fn far_obstacle_never_collides() {
        let spec = EnvironmentSpec::throw();
        let far = Obstacle::new([200.0, 200.0, 1.0], [1.0, 1.0, 1.0]).unwrap();
        let mut r = rng::rng(2);
        for _ in 0..50 {
            let theta = spec.params(spec.bounds().sample(&mut r)).unwrap();
            assert!(!spec.collides(&theta, &far).unwrap());
        }
        let base = Obstacle::new([0.0, 0.0, 0.1], [0.2, 0.2, 0.2]).unwrap();
        assert!(spec.collides(&zero_theta(&spec), &base).unwrap());
        assert!(!spec.collides(&zero_theta(&spec), &base.translated([0.0, 0.0, 10.0])).unwrap());
        assert!(EnvironmentSpec::for_kind(EnvKind::Pusherlike)
            .collides(&zero_theta(&spec), &base)
            .is_err());
    }
}
