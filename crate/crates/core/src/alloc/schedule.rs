//! Decoding, scheduling and constraint checking.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AllocProblem, AllocTask, Chromosome, Motion, TaskKind, Travel};
use crate::domain::{capability_satisfies, CapabilitySet, RobotId};
use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Fixed-point iterations used to meet a moving gossip target.
const MEET_ITERATIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Violation {
    /// Assigned robots lack the required capabilities.
    Capability { task: usize },
    /// The robot's sequence can never reach this task (cyclic wait).
    Precedence { robot: RobotId, task: usize },
    /// A discovered task nobody performs.
    Unscheduled { task: usize },
    /// A disconnected robot acts before a gossip reaches it.
    Uninformed { robot: RobotId, task: usize },
    NegativeTime { robot: RobotId, task: usize },
    Unreachable { robot: RobotId, task: usize },
    Duplicate { robot: RobotId, task: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub robot: RobotId,
    pub task: usize,
    pub start: f64,
    pub end: f64,
    /// Where the robot performs the task (the meeting point for gossip).
    pub location: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Task indices per robot in execution order.
    pub sequences: Vec<Vec<usize>>,
    /// Epoch of each entry in `sequences`.
    pub epochs: Vec<Vec<usize>>,
    /// Precedence edges per robot.
    pub precedence: Vec<BTreeSet<(usize, usize)>>,
    pub schedule: Vec<ScheduleEntry>,
    pub violations: Vec<Violation>,
    pub fitness: f64,
}

impl Policy {
    pub fn entry(&self, robot: RobotId, task: usize) -> Option<&ScheduleEntry> {
        self.schedule.iter().find(|e| e.robot == robot && e.task == task)
    }

    pub fn makespan(&self, robot: RobotId) -> f64 {
        self.sequences[robot].last().and_then(|&t| self.entry(robot, t)).map_or(0.0, |e| e.end)
    }

    pub fn is_feasible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Arrival time and meeting location when leaving `from` at `ready` with
/// `speed`. Moving targets are re-projected to the estimated arrival a few
/// times.
pub fn arrival_time(from: Vec2, ready: f64, speed: f64, target: &AllocTask, travel: &dyn Travel) -> (f64, Vec2) {
    match &target.motion {
        None => (ready + travel.distance(from, target.position) / speed, target.position),
        Some(m) => meet_moving(from, ready, speed, m, travel),
    }
}

fn meet_moving(from: Vec2, ready: f64, speed: f64, m: &Motion, travel: &dyn Travel) -> (f64, Vec2) {
    let mut at = m.at(ready);
    let mut t = ready + travel.distance(from, at) / speed;
    for _ in 0..MEET_ITERATIONS {
        if !t.is_finite() {
            break;
        }
        let next_at = m.at(t);
        let next_t = ready + travel.distance(from, next_at) / speed;
        at = next_at;
        if (next_t - t).abs() < 1e-9 {
            t = next_t;
            break;
        }
        t = next_t;
    }
    (t, at)
}

/// Per-robot `(epoch, task)` lists, or None when some robot holds two tasks
/// in one epoch.
fn read_sequences(chrom: &Chromosome, p: &AllocProblem) -> Option<Vec<Vec<(usize, usize)>>> {
    let mut seqs = vec![Vec::new(); p.n_robots()];
    for (r, seq) in seqs.iter_mut().enumerate() {
        for e in 0..p.n_epochs {
            let mut found = None;
            for t in 0..p.n_tasks() {
                if chrom.get(p, r, e, t) {
                    if found.is_some() {
                        return None;
                    }
                    found = Some(t);
                }
            }
            if let Some(t) = found {
                seq.push((e, t));
            }
        }
    }
    Some(seqs)
}

fn decode_inner(chrom: &Chromosome, p: &AllocProblem, travel: &dyn Travel) -> Result<Policy> {
    if chrom.bits.len() != p.chromosome_len() {
        return Err(Error::Decode(format!("chromosome length {} != {}", chrom.bits.len(), p.chromosome_len())));
    }
    let raw = read_sequences(chrom, p).ok_or_else(|| Error::Decode("robot holds two tasks in one epoch".into()))?;
    let n = p.n_robots();
    let mut violations = Vec::new();

    let mut seqs: Vec<Vec<(usize, usize)>> = Vec::with_capacity(n);
    for (r, s) in raw.into_iter().enumerate() {
        let mut seen = BTreeSet::new();
        let mut kept = Vec::new();
        for (e, t) in s {
            if seen.insert(t) {
                kept.push((e, t));
            } else {
                violations.push(Violation::Duplicate { robot: r, task: t });
            }
        }
        seqs.push(kept);
    }

    let mut assignees: Vec<Vec<RobotId>> = vec![Vec::new(); p.n_tasks()];
    for (r, s) in seqs.iter().enumerate() {
        for &(_, t) in s {
            assignees[t].push(r);
        }
    }
    for (t, task) in p.tasks.iter().enumerate() {
        if assignees[t].is_empty() {
            if !task.is_gossip() {
                violations.push(Violation::Unscheduled { task: t });
            }
            continue;
        }
        let caps: Vec<CapabilitySet> = assignees[t].iter().map(|&r| p.robots[r].capability).collect();
        if !capability_satisfies(&caps, &task.required, p.n_kinds)? {
            violations.push(Violation::Capability { task: t });
        }
    }

    // epoch after which each robot holds the current plan
    let mut informed: Vec<Option<i64>> = (0..n).map(|r| p.connected.contains(&r).then_some(-1)).collect();
    loop {
        let mut changed = false;
        for (r, s) in seqs.iter().enumerate() {
            let Some(ir) = informed[r] else { continue };
            for &(e, t) in s {
                if let TaskKind::Gossip { target } = p.tasks[t].kind {
                    if target != r && (e as i64) > ir && informed[target].map_or(true, |cur| (e as i64) < cur) {
                        informed[target] = Some(e as i64);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    for (r, s) in seqs.iter().enumerate() {
        for &(e, t) in s {
            let ok = informed[r].is_some_and(|ir| (e as i64) > ir) && p.tasks[t].kind != TaskKind::Gossip { target: r };
            if !ok {
                violations.push(Violation::Uninformed { robot: r, task: t });
            }
        }
    }

    // event-synchronised schedule
    let mut cursor = vec![0usize; n];
    let mut clock: Vec<f64> = p.robots.iter().map(|r| r.ready_at).collect();
    let mut pos: Vec<Vec2> = p.robots.iter().map(|r| r.position).collect();
    let mut heard: Vec<Option<f64>> = (0..n).map(|r| p.connected.contains(&r).then_some(0.0)).collect();
    let mut schedule = Vec::new();
    loop {
        let mut ready: BTreeSet<usize> = BTreeSet::new();
        for r in 0..n {
            if let Some(&(_, t)) = seqs[r].get(cursor[r]) {
                let all_here = assignees[t].iter().all(|&a| heard[a].is_some() && seqs[a].get(cursor[a]).is_some_and(|&(_, u)| u == t));
                if all_here {
                    ready.insert(t);
                }
            }
        }
        if ready.is_empty() {
            break;
        }
        for t in ready {
            let task = &p.tasks[t];
            let mut legs = Vec::new();
            for &r in &assignees[t] {
                let leave = clock[r].max(heard[r].unwrap_or(0.0));
                let (mut arr, at) = arrival_time(pos[r], leave, p.robots[r].speed, task, travel);
                if !arr.is_finite() {
                    violations.push(Violation::Unreachable { robot: r, task: t });
                    arr = leave;
                }
                legs.push((r, arr, at));
            }
            let start = legs.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
            let end = start + task.duration;
            for &(r, _, at) in &legs {
                if start < 0.0 {
                    violations.push(Violation::NegativeTime { robot: r, task: t });
                }
                schedule.push(ScheduleEntry { robot: r, task: t, start, end, location: at });
                clock[r] = end;
                pos[r] = at;
                cursor[r] += 1;
            }
            if let TaskKind::Gossip { target } = task.kind {
                if heard[target].is_none_or(|h| end < h) {
                    heard[target] = Some(end);
                    pos[target] = legs[0].2;
                    clock[target] = clock[target].max(end);
                }
            }
        }
    }
    for r in 0..n {
        for &(_, t) in &seqs[r][cursor[r]..] {
            violations.push(Violation::Precedence { robot: r, task: t });
        }
    }

    let sequences: Vec<Vec<usize>> = seqs.iter().map(|s| s.iter().map(|&(_, t)| t).collect()).collect();
    let epochs: Vec<Vec<usize>> = seqs.iter().map(|s| s.iter().map(|&(e, _)| e).collect()).collect();
    let mut precedence: Vec<BTreeSet<(usize, usize)>> = sequences.iter().map(|s| s.windows(2).map(|w| (w[0], w[1])).collect()).collect();
    for (t, task) in p.tasks.iter().enumerate() {
        if let TaskKind::Gossip { target } = task.kind {
            if !assignees[t].is_empty() {
                for &u in &sequences[target] {
                    precedence[target].insert((t, u));
                }
            }
        }
    }
    violations.sort();
    violations.dedup();
    let mut policy = Policy { sequences, epochs, precedence, schedule, violations, fitness: 0.0 };
    let makespans: f64 = (0..n).map(|r| policy.makespan(r)).sum();
    policy.fitness = makespans + p.penalty_weight * policy.violations.len() as f64;
    Ok(policy)
}

/// Decode into per-robot sequences, precedence edges and a schedule.
pub fn decode_policy(chrom: &Chromosome, p: &AllocProblem, travel: &dyn Travel) -> Result<Policy> {
    decode_inner(chrom, p, travel)
}

pub fn check_constraints(chrom: &Chromosome, p: &AllocProblem, travel: &dyn Travel) -> Result<Vec<Violation>> {
    Ok(decode_inner(chrom, p, travel)?.violations)
}

/// Summed makespan plus the violation penalty; malformed chromosomes score
/// one penalty per bit.
pub fn fitness(chrom: &Chromosome, p: &AllocProblem, travel: &dyn Travel) -> f64 {
    match decode_inner(chrom, p, travel) {
        Ok(policy) => policy.fitness,
        Err(_) => p.penalty_weight * p.chromosome_len().max(1) as f64,
    }
}

pub fn encode_policy(policy: &Policy, p: &AllocProblem) -> Result<Chromosome> {
    let mut c = Chromosome::zeros(p);
    for (r, (seq, eps)) in policy.sequences.iter().zip(&policy.epochs).enumerate() {
        for (&t, &e) in seq.iter().zip(eps) {
            if e >= p.n_epochs || t >= p.n_tasks() {
                return Err(Error::Decode(format!("epoch {e} or task {t} out of range")));
            }
            c.set(p, r, e, t, true);
        }
    }
    Ok(c)
}
