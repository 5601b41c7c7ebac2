//! Random scenario generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{Failure, Method, Scenario, ScenarioRobot};
use crate::alloc::GaParams;
use crate::belief::DEFAULT_SPEED_FACTORS;
use crate::domain::{Capability, CapabilitySet, RobotSpec, Task, TaskPhase};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::gridworld::{distance_field, Cell};

/// Robot kinds the generator knows how to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RobotKind {
    Ugv,
    Uav,
}

impl RobotKind {
    pub fn capability(self) -> Capability {
        match self {
            RobotKind::Ugv => Capability::GROUND,
            RobotKind::Uav => Capability::AERIAL,
        }
    }

    pub fn speed(self) -> f64 {
        match self {
            RobotKind::Ugv => 2.0,
            RobotKind::Uav => 6.0,
        }
    }
}

/// Parse a team description such as `2ugv,1uav`.
pub fn parse_team(spec: &str) -> Result<Vec<RobotKind>> {
    let mut team = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let split = part.find(|c: char| !c.is_ascii_digit()).unwrap_or(part.len());
        let (count, kind) = part.split_at(split);
        let count: usize = if count.is_empty() { 1 } else { count.parse().map_err(|_| Error::Generation(format!("bad count in {part:?}")))? };
        let kind = match kind.to_ascii_lowercase().as_str() {
            "ugv" => RobotKind::Ugv,
            "uav" => RobotKind::Uav,
            other => return Err(Error::Generation(format!("unknown robot kind {other:?}"))),
        };
        team.extend(std::iter::repeat_n(kind, count));
    }
    if team.is_empty() {
        return Err(Error::Generation("empty team".into()));
    }
    Ok(team)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvParams {
    pub width: f64,
    pub height: f64,
    pub resolution: f64,
    pub team: Vec<RobotKind>,
    pub n_tasks: usize,
    /// Inclusive range of rectangular obstacle counts.
    pub obstacles: (usize, usize),
    /// Obstacle side length range in meters.
    pub obstacle_side: (f64, f64),
    pub sense_radius: f64,
    pub comm_radius: f64,
    pub task_duration: (f64, f64),
    pub task_radius: f64,
    pub max_attempts: usize,
}

impl EnvParams {
    /// A 20 m square with three robots and two tasks.
    pub fn desk(team: Vec<RobotKind>) -> Self {
        EnvParams {
            width: 20.0,
            height: 20.0,
            resolution: 0.5,
            team,
            n_tasks: 2,
            obstacles: (5, 5),
            obstacle_side: (1.0, 3.0),
            sense_radius: 2.0,
            comm_radius: 10.0,
            task_duration: (2.0, 5.0),
            task_radius: 1.0,
            max_attempts: 200,
        }
    }
}

/// Robots start side by side near the origin corner.
fn start_poses(n: usize, res: f64) -> Vec<Vec2> {
    (0..n).map(|i| Vec2::new(1.0 + res * 0.5 + (i % 4) as f64 * 1.0, 1.0 + res * 0.5 + (i / 4) as f64 * 1.0)).collect()
}

pub fn gen_random_env(params: &EnvParams, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let res = params.resolution;
    let robots: Vec<ScenarioRobot> = start_poses(params.team.len(), res)
        .into_iter()
        .zip(&params.team)
        .enumerate()
        .map(|(id, (start, &kind))| ScenarioRobot {
            spec: RobotSpec {
                id,
                capability: CapabilitySet::single(kind.capability()),
                max_speed: kind.speed(),
                sense_radius: params.sense_radius,
                comm_radius: params.comm_radius,
                partition_weight: 2.0 / kind.speed(),
            },
            start,
        })
        .collect();
    let mut kinds = [false; 2];
    for k in &params.team {
        kinds[k.capability().0 as usize] = true;
    }
    let mut sc = Scenario {
        name: format!("env-{seed}"),
        width: params.width,
        height: params.height,
        resolution: res,
        robots,
        tasks: Vec::new(),
        known_obstacles: Vec::new(),
        unknown_obstacles: Vec::new(),
        failures: Vec::new(),
        seed,
        method: Method::Proposed,
        n_ranks: 3,
        speed_factors: DEFAULT_SPEED_FACTORS.to_vec(),
        tick: 0.1,
        n_kinds: 2,
        time_cap: 600.0,
        noise_std: 0.02,
        ga: GaParams::default(),
    };
    let (w, h) = sc.grid_dims();
    let starts = sc.starts();
    for _ in 0..params.max_attempts {
        let n_obs = rng.random_range(params.obstacles.0..=params.obstacles.1);
        let mut cells = std::collections::BTreeSet::new();
        for _ in 0..n_obs {
            let side = |rng: &mut ChaCha8Rng| ((rng.random_range(params.obstacle_side.0..=params.obstacle_side.1) / res).round() as usize).max(1);
            let (sw, sh) = (side(&mut rng), side(&mut rng));
            let x0 = rng.random_range(0..w.saturating_sub(sw).max(1));
            let y0 = rng.random_range(0..h.saturating_sub(sh).max(1));
            for y in y0..(y0 + sh).min(h) {
                for x in x0..(x0 + sw).min(w) {
                    cells.insert(Cell::new(x, y));
                }
            }
        }
        sc.unknown_obstacles = cells.into_iter().collect();
        let truth = sc.truth_grid()?;
        // keep a clear margin around the starting area
        if starts.iter().any(|&s| truth.blocked(s) || [(1.0, 0.0), (0.0, 1.0), (-0.5, 0.0), (0.0, -0.5)].iter().any(|&(dx, dy)| truth.blocked(s + Vec2::new(dx, dy)))) {
            continue;
        }
        let field = distance_field(&truth, truth.clamped_cell(starts[0]));
        if starts.iter().any(|&s| !field[truth.index(truth.clamped_cell(s))].is_finite()) {
            continue;
        }
        let free: Vec<Cell> = truth.cells().filter(|&c| field[truth.index(c)].is_finite()).collect();
        let mut tasks = Vec::new();
        for id in 0..params.n_tasks {
            let c = free[rng.random_range(0..free.len())];
            let mut required = vec![0u32; 2];
            while required.iter().sum::<u32>() == 0 {
                for (k, slot) in required.iter_mut().enumerate() {
                    *slot = u32::from(kinds[k] && rng.random_bool(0.5));
                }
            }
            tasks.push(Task {
                id,
                position: truth.center(c),
                required,
                duration: rng.random_range(params.task_duration.0..=params.task_duration.1),
                radius: params.task_radius,
                phase: TaskPhase::Undiscovered,
            });
        }
        sc.tasks = tasks;
        sc.validate()?;
        return Ok(sc);
    }
    Err(Error::Generation(format!("no reachable layout after {} attempts", params.max_attempts)))
}

/// Add the first `k` of a seed-determined failure schedule, so the failures
/// of a k-fault run are also present in every run with more faults.
pub fn with_faults(sc: &Scenario, k: usize, seed: u64) -> Result<Scenario> {
    let n = sc.robots.len();
    if k > n {
        return Err(Error::Generation(format!("{k} faults for {n} robots")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFA17);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut out = sc.clone();
    out.failures = order
        .into_iter()
        .map(|robot| Failure { time: rng.random_range(2.0..10.0), robot, level: rng.random_range(2..=sc.n_ranks) })
        .take(k)
        .collect();
    out.name = format!("{}-f{k}", sc.name);
    out.validate()?;
    Ok(out)
}
