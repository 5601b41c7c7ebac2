//! Shared vocabulary: robots, capabilities, statuses and tasks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;

pub type RobotId = usize;
pub type TaskId = usize;

/// One capability kind, e.g. 0 = ground, 1 = aerial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Capability(pub u8);

impl Capability {
    pub const GROUND: Capability = Capability(0);
    pub const AERIAL: Capability = Capability(1);
}

/// Set of capability kinds held by one robot (bit set, at most 32 kinds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(from = "Vec<u8>", into = "Vec<u8>")]
pub struct CapabilitySet(u32);

impl CapabilitySet {
    pub fn empty() -> Self {
        CapabilitySet(0)
    }

    pub fn of(kinds: &[Capability]) -> Self {
        let mut set = CapabilitySet(0);
        for &k in kinds {
            set.insert(k);
        }
        set
    }

    pub fn single(kind: Capability) -> Self {
        Self::of(&[kind])
    }

    pub fn insert(&mut self, kind: Capability) {
        assert!(kind.0 < 32, "capability kind {} out of range", kind.0);
        self.0 |= 1 << kind.0;
    }

    pub fn contains(&self, kind: Capability) -> bool {
        kind.0 < 32 && self.0 & (1 << kind.0) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn kinds(&self) -> impl Iterator<Item = Capability> + '_ {
        (0..32u8).filter(move |k| self.0 & (1 << k) != 0).map(Capability)
    }

    /// Largest kind id + 1, i.e. the minimum N_k this set is compatible with.
    pub fn span(&self) -> usize {
        32 - self.0.leading_zeros() as usize
    }
}

impl From<Vec<u8>> for CapabilitySet {
    fn from(v: Vec<u8>) -> Self {
        CapabilitySet::of(&v.into_iter().map(Capability).collect::<Vec<_>>())
    }
}

impl From<CapabilitySet> for Vec<u8> {
    fn from(s: CapabilitySet) -> Self {
        s.kinds().map(|k| k.0).collect()
    }
}

/// Static description of one robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: RobotId,
    pub capability: CapabilitySet,
    /// m/s
    pub max_speed: f64,
    /// m
    pub sense_radius: f64,
    /// m
    pub comm_radius: f64,
    /// Multiplicative weight used when partitioning frontiers.
    pub partition_weight: f64,
}

impl RobotSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_speed", self.max_speed),
            ("sense_radius", self.sense_radius),
            ("comm_radius", self.comm_radius),
            ("partition_weight", self.partition_weight),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Scenario(format!("robot {}: {name} must be > 0, got {v}", self.id)));
            }
        }
        Ok(())
    }
}

/// What a robot is currently doing. Ordered so it can key epistemic valuations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Status {
    Exploring,
    /// Travelling to meet `target` at its belief particle of `rank` (1-based).
    Gossiping { target: RobotId, rank: usize },
    PerformingTask { task: TaskId },
    ReturningToBase,
    AtMeeting,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Exploring => write!(f, "exploring"),
            Status::Gossiping { target, rank } => write!(f, "gossiping({target},{rank})"),
            Status::PerformingTask { task } => write!(f, "task({task})"),
            Status::ReturningToBase => write!(f, "returning"),
            Status::AtMeeting => write!(f, "meeting"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskPhase {
    Undiscovered,
    Discovered,
    InProgress,
    Complete,
}

/// A stationary task that completes once the required capabilities dwell
/// together within `radius` of `position` for `duration` seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub position: Vec2,
    /// Robots needed per capability kind.
    pub required: Vec<u32>,
    pub duration: f64,
    pub radius: f64,
    #[serde(default = "undiscovered")]
    pub phase: TaskPhase,
}

fn undiscovered() -> TaskPhase {
    TaskPhase::Undiscovered
}

impl Task {
    pub fn validate(&self, n_kinds: usize) -> Result<()> {
        if self.required.len() != n_kinds {
            return Err(Error::Scenario(format!(
                "task {}: required has {} entries, expected {n_kinds}",
                self.id,
                self.required.len()
            )));
        }
        if self.required.iter().sum::<u32>() < 1 {
            return Err(Error::Scenario(format!("task {} requires no robots", self.id)));
        }
        if !(self.duration >= 0.0) || !(self.radius > 0.0) {
            return Err(Error::Scenario(format!("task {}: bad duration or radius", self.id)));
        }
        Ok(())
    }

    /// Move to `next` if it does not regress; returns whether the phase changed.
    pub fn advance(&mut self, next: TaskPhase) -> bool {
        if next > self.phase {
            self.phase = next;
            true
        } else {
            false
        }
    }
}

/// Pose with heading, radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec2,
    pub heading: f64,
}

/// Robot state, capability, local-map version and status as announced to peers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disposition {
    pub robot: RobotId,
    pub pose: Pose,
    pub capability: CapabilitySet,
    pub map_version: u64,
    pub status: Status,
}

/// True iff, for every kind `k`, at least `required[k]` of the assigned
/// robots hold kind `k`. A robot with several kinds counts once per kind.
pub fn capability_satisfies(assigned: &[CapabilitySet], required: &[u32], n_kinds: usize) -> Result<bool> {
    if required.len() != n_kinds {
        return Err(Error::Contract(format!(
            "required vector has length {}, scenario has {n_kinds} capability kinds",
            required.len()
        )));
    }
    Ok(required.iter().enumerate().all(|(k, &need)| {
        let have = assigned.iter().filter(|c| c.contains(Capability(k as u8))).count() as u32;
        have >= need
    }))
}

/// Advance the dwell accumulator of a task by one tick.
///
/// `assigned` holds the position and capability of each robot committed to
/// the task. Dwell grows by `dt` only while the robots within `task.radius`
/// jointly satisfy the requirement, and resets to zero when they stop doing so.
pub fn task_progress(
    task: &Task,
    assigned: &[(Vec2, CapabilitySet)],
    dwell: f64,
    dt: f64,
) -> Result<(TaskPhase, f64)> {
    if !matches!(task.phase, TaskPhase::Discovered | TaskPhase::InProgress) {
        return Err(Error::Contract(format!("task {} is {:?}, cannot progress", task.id, task.phase)));
    }
    let inside: Vec<CapabilitySet> = assigned
        .iter()
        .filter(|(p, _)| p.dist(task.position) <= task.radius)
        .map(|&(_, c)| c)
        .collect();
    if !capability_satisfies(&inside, &task.required, task.required.len())? {
        return Ok((task.phase, 0.0));
    }
    let dwell = dwell + dt;
    let phase = if dwell >= task.duration { TaskPhase::Complete } else { TaskPhase::InProgress };
    Ok((phase, dwell))
}
