//! Task allocation with gossip.
//!
//! An allocation instance is a set of candidate tasks (discovered tasks plus
//! one gossip task per disconnected robot) and the whole team. A solution is
//! a binary tensor `y[robot][epoch][task]` flattened robot-major into a
//! [`Chromosome`]. Feasible solutions are generated randomly to warm-start a
//! genetic algorithm whose objective is the summed makespan plus a large
//! penalty per violated constraint.

mod ga;
mod schedule;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::domain::{CapabilitySet, RobotId, TaskId};
use crate::error::{Error, Result};
use crate::geom::Vec2;

pub use ga::{ga_solve, ga_solve_threaded, gen_feasible, GaParams, GaResult, GenerationStats, FEASIBLE_THRESHOLD};
pub use schedule::{arrival_time, check_constraints, decode_policy, encode_policy, fitness, Policy, ScheduleEntry, Violation};

pub const PENALTY_WEIGHT: f64 = 1e6;

/// Distances used to estimate travel times.
pub trait Travel: Sync {
    /// Path length from `from` to `to`, infinite when unreachable.
    fn distance(&self, from: Vec2, to: Vec2) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl Travel for Euclidean {
    fn distance(&self, from: Vec2, to: Vec2) -> f64 {
        from.dist(to)
    }
}

/// Believed future motion: a polyline starting at the current pose,
/// travelled at constant speed and held at its end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub path: Vec<Vec2>,
    pub speed: f64,
}

impl Motion {
    pub fn stationary(p: Vec2) -> Self {
        Motion { path: vec![p], speed: 0.0 }
    }

    pub fn at(&self, t: f64) -> Vec2 {
        let mut budget = (self.speed * t).max(0.0);
        let mut at = self.path[0];
        for &w in &self.path[1..] {
            let d = at.dist(w);
            if d >= budget {
                return at.step_toward(w, budget);
            }
            budget -= d;
            at = w;
        }
        at
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    Real(TaskId),
    Gossip { target: RobotId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocTask {
    pub kind: TaskKind,
    pub position: Vec2,
    pub required: Vec<u32>,
    pub duration: f64,
    /// Present for gossip tasks: where the target is believed to travel.
    pub motion: Option<Motion>,
}

impl AllocTask {
    pub fn real(id: TaskId, position: Vec2, required: Vec<u32>, duration: f64) -> Self {
        AllocTask { kind: TaskKind::Real(id), position, required, duration, motion: None }
    }

    pub fn is_gossip(&self) -> bool {
        matches!(self.kind, TaskKind::Gossip { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocRobot {
    pub id: RobotId,
    pub capability: CapabilitySet,
    /// Believed position at planning time.
    pub position: Vec2,
    /// Believed speed, already scaled by the believed rank.
    pub speed: f64,
    /// Earliest time the robot can start travelling.
    pub ready_at: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocProblem {
    pub robots: Vec<AllocRobot>,
    pub tasks: Vec<AllocTask>,
    pub connected: BTreeSet<RobotId>,
    pub n_epochs: usize,
    pub n_kinds: usize,
    pub penalty_weight: f64,
}

/// One gossip task per robot outside `connected`, aimed at its believed
/// motion. Any single robot can complete it, instantly.
pub fn synthesize_gossip_tasks(n_robots: usize, connected: &BTreeSet<RobotId>, believed: &[Motion], n_kinds: usize) -> Vec<AllocTask> {
    (0..n_robots)
        .filter(|j| !connected.contains(j))
        .map(|j| AllocTask {
            kind: TaskKind::Gossip { target: j },
            position: believed[j].path[0],
            required: vec![0; n_kinds],
            duration: 0.0,
            motion: Some(believed[j].clone()),
        })
        .collect()
}

impl AllocProblem {
    /// Problem with one epoch per candidate task.
    pub fn new(robots: Vec<AllocRobot>, tasks: Vec<AllocTask>, connected: BTreeSet<RobotId>, n_kinds: usize) -> Result<Self> {
        let p = AllocProblem { n_epochs: tasks.len(), robots, tasks, connected, n_kinds, penalty_weight: PENALTY_WEIGHT };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.robots.iter().enumerate().any(|(i, r)| r.id != i) {
            return Err(Error::Contract("robot ids must be 0..N in order".into()));
        }
        if self.connected.iter().any(|&c| c >= self.robots.len()) {
            return Err(Error::Contract("connected robot out of range".into()));
        }
        if self.robots.iter().any(|r| !(r.speed > 0.0) || r.ready_at < 0.0) {
            return Err(Error::Contract("robot speeds must be positive".into()));
        }
        for t in &self.tasks {
            if t.required.len() != self.n_kinds || t.duration < 0.0 {
                return Err(Error::Contract(format!("malformed task {:?}", t.kind)));
            }
            match (t.kind, &t.motion) {
                (TaskKind::Gossip { target }, Some(m)) if target < self.robots.len() && !m.path.is_empty() => {}
                (TaskKind::Real(_), None) => {}
                _ => return Err(Error::Contract(format!("malformed task {:?}", t.kind))),
            }
        }
        Ok(())
    }

    pub fn n_robots(&self) -> usize {
        self.robots.len()
    }
    pub fn n_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn chromosome_len(&self) -> usize {
        self.n_robots() * self.n_epochs * self.n_tasks()
    }

    pub fn gossip_task_for(&self, target: RobotId) -> Option<usize> {
        self.tasks.iter().position(|t| t.kind == TaskKind::Gossip { target })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: AllocProblem = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}

/// Flat decision vector, robot-major then epoch then task.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chromosome {
    pub bits: Vec<bool>,
}

impl Chromosome {
    pub fn zeros(problem: &AllocProblem) -> Self {
        Chromosome { bits: vec![false; problem.chromosome_len()] }
    }

    pub fn index(problem: &AllocProblem, robot: RobotId, epoch: usize, task: usize) -> usize {
        (robot * problem.n_epochs + epoch) * problem.n_tasks() + task
    }

    pub fn get(&self, problem: &AllocProblem, robot: RobotId, epoch: usize, task: usize) -> bool {
        self.bits[Self::index(problem, robot, epoch, task)]
    }

    pub fn set(&mut self, problem: &AllocProblem, robot: RobotId, epoch: usize, task: usize, v: bool) {
        self.bits[Self::index(problem, robot, epoch, task)] = v;
    }
}
