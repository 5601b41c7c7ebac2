use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::OccupancyGrid;
use crate::geom::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicState {
    pub position: Vec2,
    /// radians
    pub heading: f64,
    /// m/s
    pub speed_cap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: KinematicState,
    pub collided: bool,
}

/// One step of the single-integrator dynamics with additive Gaussian noise.
///
/// The command is clamped to the speed cap, the result is clamped to the
/// workspace, and any motion whose swept segment enters an Occupied cell of
/// `world` is rejected (position kept, `collided` set).
pub fn step_dynamics<R: Rng + ?Sized>(
    state: &KinematicState,
    control: Vec2,
    noise_std: f64,
    dt: f64,
    world: &OccupancyGrid,
    rng: &mut R,
) -> StepOutcome {
    let control = control.clamp_norm(state.speed_cap);
    let mut delta = control * dt;
    if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std * dt.sqrt()).expect("finite std");
        delta += Vec2::new(normal.sample(rng), normal.sample(rng));
    }
    let heading = if control.norm() > 0.0 { control.heading() } else { state.heading };
    let target = world.clamp_point(state.position + delta);
    if segment_blocked(world, state.position, target) {
        return StepOutcome { state: KinematicState { heading, ..*state }, collided: true };
    }
    StepOutcome { state: KinematicState { position: target, heading, speed_cap: state.speed_cap }, collided: false }
}

/// Samples the segment at quarter-cell spacing.
pub(crate) fn segment_blocked(world: &OccupancyGrid, from: Vec2, to: Vec2) -> bool {
    let len = from.dist(to);
    let n = ((len / (world.resolution() * 0.25)).ceil() as usize).max(1);
    (1..=n).any(|k| world.blocked(from + (to - from) * (k as f64 / n as f64)))
}

/// Artificial-potential-field gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApfGains {
    pub attractive: f64,
    pub repulsive: f64,
    /// Influence radius d_0 in meters.
    pub influence: f64,
    /// Cap on any single obstacle's repulsion magnitude.
    pub max_repulsion: f64,
}

impl Default for ApfGains {
    fn default() -> Self {
        ApfGains { attractive: 1.0, repulsive: 0.05, influence: 0.75, max_repulsion: 2.0 }
    }
}

/// Velocity command: linear attraction to `waypoint` plus the classic
/// (1/d - 1/d0)/d^2 repulsion from each obstacle closer than d0, clamped to
/// `speed_cap`.
pub fn apf_step(pose: Vec2, waypoint: Vec2, obstacles: &[Vec2], gains: &ApfGains, speed_cap: f64) -> Vec2 {
    let attraction = (waypoint - pose) * gains.attractive;
    let mut cmd = attraction;
    for &o in obstacles {
        let away = pose - o;
        let d = away.norm();
        if d >= gains.influence {
            continue;
        }
        let dir = if d > 1e-9 {
            away / d
        } else if attraction.norm() > 0.0 {
            -attraction.unit()
        } else {
            Vec2::new(1.0, 0.0)
        };
        let mag = if d > 1e-9 {
            gains.repulsive * (1.0 / d - 1.0 / gains.influence) / (d * d)
        } else {
            f64::INFINITY
        };
        cmd += dir * mag.min(gains.max_repulsion);
    }
    cmd.clamp_norm(speed_cap)
}
