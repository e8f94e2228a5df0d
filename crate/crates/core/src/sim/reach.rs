//! Toy reaching task rendered to 16x16 grayscale frames.

use serde::{Deserialize, Serialize};

pub const GRID: usize = 16;
pub const FRAME_LEN: usize = GRID * GRID;
pub const STEP: f64 = 0.05;
pub const TOUCH_RADIUS: f64 = 0.1;
/// The gripper may wander this far outside the visible square.
pub const MARGIN: f64 = 0.15;

const GRIPPER_INTENSITY: f64 = 1.0;
const TARGET_INTENSITY: f64 = 0.5;
/// Blob radius in pixels.
const BLOB_RADIUS: f64 = 1.5;

/// Elementary hand moves; the z moves leave the planar state unchanged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReachAction {
    PlusX,
    MinusX,
    PlusY,
    MinusY,
    PlusZ,
    MinusZ,
}

impl ReachAction {
    pub const ALL: [ReachAction; 6] = [
        ReachAction::PlusX,
        ReachAction::MinusX,
        ReachAction::PlusY,
        ReachAction::MinusY,
        ReachAction::PlusZ,
        ReachAction::MinusZ,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|a| *a == self).expect("listed")
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn delta(self) -> [f64; 2] {
        match self {
            ReachAction::PlusX => [STEP, 0.0],
            ReachAction::MinusX => [-STEP, 0.0],
            ReachAction::PlusY => [0.0, STEP],
            ReachAction::MinusY => [0.0, -STEP],
            ReachAction::PlusZ | ReachAction::MinusZ => [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachState {
    pub gripper: [f64; 2],
    pub target: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFrame {
    pub pixels: Vec<f64>,
    pub gripper: [f64; 2],
    pub target: [f64; 2],
    pub reward: i8,
}

pub fn reward(state: &ReachState) -> i8 {
    let [gx, gy] = state.gripper;
    if !(0.0..=1.0).contains(&gx) || !(0.0..=1.0).contains(&gy) {
        -1
    } else if ((gx - state.target[0]).powi(2) + (gy - state.target[1]).powi(2)).sqrt() < TOUCH_RADIUS {
        1
    } else {
        0
    }
}

/// Anti-aliased disc: each pixel takes `intensity` times the fraction of its
/// area covered, estimated on a regular sub-grid.
fn stamp(pixels: &mut [f64], pos: [f64; 2], intensity: f64) {
    const SUB: usize = 8;
    let cx = pos[0] * GRID as f64;
    let cy = pos[1] * GRID as f64;
    let span = |c: f64| {
        let lo = (c - BLOB_RADIUS).floor().max(0.0) as usize;
        let hi = ((c + BLOB_RADIUS).ceil().max(0.0) as usize).min(GRID);
        lo..hi
    };
    for row in span(cy) {
        for col in span(cx) {
            let mut covered = 0;
            for a in 0..SUB {
                for b in 0..SUB {
                    let dx = col as f64 + (b as f64 + 0.5) / SUB as f64 - cx;
                    let dy = row as f64 + (a as f64 + 0.5) / SUB as f64 - cy;
                    if dx * dx + dy * dy <= BLOB_RADIUS * BLOB_RADIUS {
                        covered += 1;
                    }
                }
            }
            if covered > 0 {
                let p = &mut pixels[row * GRID + col];
                *p = p.max(intensity * covered as f64 / (SUB * SUB) as f64);
            }
        }
    }
}

pub fn render(state: &ReachState) -> Vec<f64> {
    let mut pixels = vec![0.0; FRAME_LEN];
    stamp(&mut pixels, state.target, TARGET_INTENSITY);
    stamp(&mut pixels, state.gripper, GRIPPER_INTENSITY);
    pixels
}

pub fn observe(state: &ReachState) -> ObservationFrame {
    ObservationFrame {
        pixels: render(state),
        gripper: state.gripper,
        target: state.target,
        reward: reward(state),
    }
}

/// Move the gripper one elementary step and render the result.
pub fn reach_step(state: &mut ReachState, action: ReachAction) -> ObservationFrame {
    let d = action.delta();
    for i in 0..2 {
        state.gripper[i] = (state.gripper[i] + d[i]).clamp(-MARGIN, 1.0 + MARGIN);
    }
    observe(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn touching_rewards_plus_one() {
        let mut s = ReachState {
            gripper: [0.5, 0.5],
            target: [0.5, 0.5],
        };
        assert_eq!(reach_step(&mut s, ReachAction::PlusX).reward, 1);
        assert_eq!(reach_step(&mut s, ReachAction::PlusZ).reward, 1);
    }

    #[test]
    fn leaving_the_frame_rewards_minus_one() {
        let mut s = ReachState {
            gripper: [0.0, 0.0],
            target: [0.5, 0.5],
        };
        assert_eq!(reach_step(&mut s, ReachAction::MinusX).reward, -1);
    }

    #[test]
    fn far_and_inside_rewards_zero() {
        let mut s = ReachState {
            gripper: [0.1, 0.1],
            target: [0.8, 0.8],
        };
        assert_eq!(reach_step(&mut s, ReachAction::PlusY).reward, 0);
    }

    #[test]
    fn frame_intensities() {
        let state = ReachState {
            gripper: [0.2, 0.2],
            target: [0.8, 0.7],
        };
        let f = observe(&state);
        assert_eq!(f.pixels.len(), FRAME_LEN);
        let max = f.pixels.iter().cloned().fold(0.0, f64::max);
        assert_eq!(max, GRIPPER_INTENSITY);
        // Pixels far from both blobs are background.
        assert_eq!(f.pixels[15 * GRID], 0.0);
        assert_eq!(f.pixels[0], 0.0);
        let only_target = render(&ReachState {
            gripper: [-1.0, -1.0],
            ..state
        });
        assert_eq!(only_target.iter().cloned().fold(0.0, f64::max), TARGET_INTENSITY);
        assert!(f.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn one_step_changes_the_frame() {
        let mut s = ReachState {
            gripper: [0.43, 0.61],
            target: [0.8, 0.2],
        };
        let before = render(&s);
        for a in [ReachAction::PlusX, ReachAction::MinusX, ReachAction::PlusY, ReachAction::MinusY] {
            let mut t = s;
            assert_ne!(reach_step(&mut t, a).pixels, before, "{a:?}");
        }
        assert_eq!(reach_step(&mut s, ReachAction::PlusZ).pixels, before);
    }

    #[test]
    fn z_moves_are_no_ops_and_gripper_stays_near_frame() {
        let mut s = ReachState {
            gripper: [0.3, 0.3],
            target: [0.8, 0.7],
        };
        reach_step(&mut s, ReachAction::MinusZ);
        assert_eq!(s.gripper, [0.3, 0.3]);
        for _ in 0..100 {
            reach_step(&mut s, ReachAction::MinusY);
        }
        assert!(s.gripper[1] >= -MARGIN);
    }

    #[test]
    fn action_indices_round_trip() {
        for a in ReachAction::ALL {
            assert_eq!(ReachAction::from_index(a.index()), Some(a));
        }
        assert_eq!(ReachAction::from_index(6), None);
    }
}
