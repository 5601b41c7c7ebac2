//! Belief and empathy particles.
//!
//! Every robot keeps a finite, rank-ordered set of hypotheses about every
//! robot in the team, itself included. Rank 1 is nominal behaviour and is the
//! common-belief particle shared by everyone who took part in the last full
//! announce; higher ranks model the same plan executed at reduced speed.
//! Propagation is noiseless and deterministic so that two stores seeded by
//! the same announce stay bit-identical.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::domain::{RobotId, RobotSpec, Status, TaskId};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::gridworld::{plan_path, Cell, CellClass, OccupancyGrid};

/// Speed factors used unless a scenario overrides them.
pub const DEFAULT_SPEED_FACTORS: [f64; 3] = [1.0, 0.6, 0.2];

/// A pending step in a particle's believed plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AgendaItem {
    /// Travel to a task and dwell there.
    Visit { task: TaskId, position: Vec2, dwell: f64 },
    /// Travel until within the meeting radius of another robot's common particle.
    Meet { subject: RobotId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub owner: RobotId,
    pub subject: RobotId,
    /// 1-based likelihood rank.
    pub rank: usize,
    pub pose: Vec2,
    pub speed_factor: f64,
    pub status: Status,
    pub goal: Option<Vec2>,
    /// Remaining string-pulled waypoints in world coordinates.
    pub path: Vec<Vec2>,
    pub agenda: VecDeque<AgendaItem>,
    pub wait_left: f64,
    pub refuted: bool,
    /// Set when the last plan toward the current target failed.
    pub stuck: bool,
    planned_for: Option<Cell>,
}

impl Particle {
    pub fn is_empathy(&self) -> bool {
        self.owner == self.subject
    }

    /// Whether the particle will not move this tick (no target or dwelling).
    pub fn is_idle(&self) -> bool {
        self.wait_left > 0.0 || (self.agenda.is_empty() && self.goal.map_or(true, |g| g.dist(self.pose) < 1e-9))
    }

    /// Position reached after travelling `t` seconds along the cached path at
    /// `speed`; the last waypoint is held once reached.
    pub fn project(&self, speed: f64, t: f64) -> Vec2 {
        let mut budget = (speed * t).max(0.0);
        let mut at = self.pose;
        for &w in &self.path {
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

/// One robot's full hypothesis set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefStore {
    owner: RobotId,
    n_ranks: usize,
    speed_factors: Vec<f64>,
    max_speeds: Vec<f64>,
    /// subject-major, rank-minor
    particles: Vec<Particle>,
    believed_rank: Vec<usize>,
    /// Rank each subject was announced at; its particle there is the common one.
    common_rank: Vec<usize>,
    tracked: usize,
    meeting: Option<Vec2>,
}

/// Why a particle held position during propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unreachable {
    pub subject: RobotId,
    pub rank: usize,
}

/// Row of the particle trace: `(tick, owner, subject, rank, x, y, status)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub tick: u64,
    pub owner: RobotId,
    pub subject: RobotId,
    pub rank: usize,
    pub x: f64,
    pub y: f64,
    pub status: Status,
}

pub fn validate_speed_factors(speed_factors: &[f64], n_ranks: usize) -> Result<()> {
    if speed_factors.len() != n_ranks || n_ranks == 0 {
        return Err(Error::Contract(format!("need {n_ranks} speed factors, got {}", speed_factors.len())));
    }
    if speed_factors[0] != 1.0 {
        return Err(Error::Contract("rank-1 speed factor must be 1.0".into()));
    }
    if speed_factors.windows(2).any(|w| !(w[1] < w[0]) || !(w[1] > 0.0)) {
        return Err(Error::Contract("speed factors must be positive and strictly decreasing".into()));
    }
    Ok(())
}

/// One store per robot, every particle at its subject's start pose, status
/// Exploring, every robot tracking its first empathy particle.
pub fn init_store(specs: &[RobotSpec], start_poses: &[Vec2], n_ranks: usize, speed_factors: &[f64]) -> Result<Vec<BeliefStore>> {
    validate_speed_factors(speed_factors, n_ranks)?;
    if specs.len() != start_poses.len() {
        return Err(Error::Contract("one start pose per robot required".into()));
    }
    if specs.iter().enumerate().any(|(i, s)| s.id != i) {
        return Err(Error::Contract("robot ids must be 0..N in order".into()));
    }
    let max_speeds: Vec<f64> = specs.iter().map(|s| s.max_speed).collect();
    Ok(specs
        .iter()
        .map(|owner| {
            let particles = specs
                .iter()
                .flat_map(|subj| {
                    (1..=n_ranks).map(move |rank| Particle {
                        owner: owner.id,
                        subject: subj.id,
                        rank,
                        pose: start_poses[subj.id],
                        speed_factor: speed_factors[rank - 1],
                        status: Status::Exploring,
                        goal: None,
                        path: Vec::new(),
                        agenda: VecDeque::new(),
                        wait_left: 0.0,
                        refuted: false,
                        stuck: false,
                        planned_for: None,
                    })
                })
                .collect();
            BeliefStore {
                owner: owner.id,
                n_ranks,
                speed_factors: speed_factors.to_vec(),
                max_speeds: max_speeds.clone(),
                particles,
                believed_rank: vec![1; specs.len()],
                common_rank: vec![1; specs.len()],
                tracked: 1,
                meeting: None,
            }
        })
        .collect())
}

impl BeliefStore {
    pub fn owner(&self) -> RobotId {
        self.owner
    }
    pub fn n_ranks(&self) -> usize {
        self.n_ranks
    }
    pub fn n_robots(&self) -> usize {
        self.believed_rank.len()
    }
    pub fn speed_factors(&self) -> &[f64] {
        &self.speed_factors
    }
    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }
    pub fn max_speed(&self, subject: RobotId) -> f64 {
        self.max_speeds[subject]
    }

    fn slot(&self, subject: RobotId, rank: usize) -> usize {
        assert!(rank >= 1 && rank <= self.n_ranks, "rank {rank} out of range");
        subject * self.n_ranks + rank - 1
    }

    pub fn particle(&self, subject: RobotId, rank: usize) -> &Particle {
        &self.particles[self.slot(subject, rank)]
    }

    pub fn particle_mut(&mut self, subject: RobotId, rank: usize) -> &mut Particle {
        let i = self.slot(subject, rank);
        &mut self.particles[i]
    }

    /// Common-belief particle c_ij: the hypothesis at the rank `subject`
    /// last announced, rank 1 unless it announced a failure.
    pub fn common(&self, subject: RobotId) -> &Particle {
        self.particle(subject, self.common_rank[subject])
    }

    pub fn common_rank(&self, subject: RobotId) -> usize {
        self.common_rank[subject]
    }

    /// Record the rank `subject` announced; lower ranks are refuted.
    pub fn set_common_rank(&mut self, subject: RobotId, rank: usize) {
        self.common_rank[subject] = rank.clamp(1, self.n_ranks);
        self.set_believed_rank(subject, rank);
    }

    pub fn common_poses(&self) -> Vec<Vec2> {
        (0..self.n_robots()).map(|j| self.common(j).pose).collect()
    }

    /// Rank at which the owner currently believes `subject` can be found.
    pub fn believed_rank(&self, subject: RobotId) -> usize {
        self.believed_rank[subject]
    }

    /// Empathy particle rank the owner is tracking.
    pub fn tracked(&self) -> usize {
        self.tracked
    }

    pub fn set_tracked(&mut self, rank: usize) -> Result<()> {
        if rank < 1 || rank > self.n_ranks {
            return Err(Error::Contract(format!("rank {rank} outside 1..={}", self.n_ranks)));
        }
        self.tracked = rank;
        Ok(())
    }

    /// Speed of `subject`'s particle of `rank`, m/s.
    pub fn particle_speed(&self, subject: RobotId, rank: usize) -> f64 {
        self.max_speeds[subject] * self.speed_factors[rank - 1]
    }

    pub fn meeting(&self) -> Option<Vec2> {
        self.meeting
    }

    pub fn set_meeting(&mut self, point: Option<Vec2>) {
        self.meeting = point;
        if let Some(m) = point {
            for p in &mut self.particles {
                if p.agenda.is_empty() {
                    p.status = Status::AtMeeting;
                    p.goal = Some(m);
                }
            }
        }
    }

    /// Highest-likelihood rank among `feasible`.
    pub fn select_tracked(&self, feasible: &BTreeSet<usize>) -> Result<usize> {
        if let Some(&bad) = feasible.iter().find(|&&r| r < 1 || r > self.n_ranks) {
            return Err(Error::Contract(format!("rank {bad} outside 1..={}", self.n_ranks)));
        }
        feasible.iter().next().copied().ok_or(Error::NoTrackableState)
    }

    /// After perceiving that `subject` is absent at its believed rank, move
    /// the belief one rank down and refute the lower ranks.
    pub fn advance_belief_rank(&mut self, subject: RobotId) -> Result<usize> {
        let b = self.believed_rank[subject];
        if b >= self.n_ranks {
            return Err(Error::BeliefsExhausted(subject));
        }
        self.believed_rank[subject] = b + 1;
        for rank in 1..=b {
            self.particle_mut(subject, rank).refuted = true;
        }
        Ok(b + 1)
    }

    /// Overwrite the exploring goal for every particle of `subject`.
    pub fn set_goal(&mut self, subject: RobotId, goal: Option<Vec2>) {
        for rank in 1..=self.n_ranks {
            let p = self.particle_mut(subject, rank);
            if p.agenda.is_empty() && p.status != Status::AtMeeting {
                p.goal = goal;
                p.status = Status::Exploring;
            }
        }
    }

    /// Replace every particle's believed plan for `subject`.
    pub fn set_agenda(&mut self, subject: RobotId, agenda: &[AgendaItem]) {
        for rank in 1..=self.n_ranks {
            let p = self.particle_mut(subject, rank);
            p.agenda = agenda.iter().cloned().collect();
            p.wait_left = 0.0;
            p.planned_for = None;
            p.status = agenda_status(&p.agenda, rank).unwrap_or(p.status);
        }
    }

    /// Reseed `subject` from an announced pose and status: rank 1 snaps to
    /// the announced state and the higher ranks restart from the same pose.
    pub fn snap_to_truth(&mut self, announced: &[(RobotId, Vec2, Status)]) {
        for &(j, pose, status) in announced {
            let common = self.common_rank[j];
            self.believed_rank[j] = common;
            for rank in 1..=self.n_ranks {
                let p = self.particle_mut(j, rank);
                p.pose = pose;
                p.status = status;
                p.goal = None;
                p.path.clear();
                p.planned_for = None;
                p.agenda.clear();
                p.wait_left = 0.0;
                p.refuted = rank < common;
                p.stuck = false;
            }
        }
    }

    /// Announced tracking rank of `subject`, learned on contact.
    pub fn set_believed_rank(&mut self, subject: RobotId, rank: usize) {
        self.believed_rank[subject] = rank.clamp(1, self.n_ranks);
        for r in 1..=self.n_ranks {
            self.particle_mut(subject, r).refuted = r < rank;
        }
    }

    /// Copy the particle set and meeting point of a store that shares this
    /// one's last full announce; owner-specific ranks are kept.
    pub fn adopt_particles(&mut self, src: &BeliefStore) {
        self.adopt_particles_except(src, &BTreeSet::new());
    }

    /// As [`adopt_particles`](Self::adopt_particles), but subjects in `keep`
    /// retain this store's own particles.
    pub fn adopt_particles_except(&mut self, src: &BeliefStore, keep: &BTreeSet<RobotId>) {
        for (k, p) in src.particles.iter().enumerate() {
            if keep.contains(&p.subject) {
                continue;
            }
            self.particles[k].clone_from(p);
            self.particles[k].owner = self.owner;
        }
        for j in 0..self.believed_rank.len() {
            if keep.contains(&j) {
                continue;
            }
            self.common_rank[j] = src.common_rank[j];
            let b = self.believed_rank[j];
            for r in 1..=self.n_ranks {
                self.particle_mut(j, r).refuted = r < b;
            }
        }
        self.meeting = src.meeting;
    }

    /// Drop every cached path so the next propagation re-plans.
    pub fn invalidate_paths(&mut self) {
        for p in &mut self.particles {
            p.planned_for = None;
        }
    }

    /// Advance every particle along its plan on the common-belief `map`.
    ///
    /// Each particle moves toward its status-dependent target at
    /// `max_speed * speed_factor`. Returns the particles that could not reach
    /// their target and therefore held position.
    pub fn propagate(&mut self, map: &OccupancyGrid, dt: f64, meet_radius: f64) -> Vec<Unreachable> {
        let all: BTreeSet<RobotId> = (0..self.n_robots()).collect();
        self.propagate_subjects(map, dt, meet_radius, &all)
    }

    /// Propagate only the particles of `subjects`.
    pub fn propagate_subjects(&mut self, map: &OccupancyGrid, dt: f64, meet_radius: f64, subjects: &BTreeSet<RobotId>) -> Vec<Unreachable> {
        let commons: Vec<Vec2> = self.common_poses();
        let mut stuck = Vec::new();
        for idx in 0..self.particles.len() {
            if !subjects.contains(&self.particles[idx].subject) {
                continue;
            }
            let speed = self.max_speeds[self.particles[idx].subject] * self.particles[idx].speed_factor;
            let meeting = self.meeting;
            let p = &mut self.particles[idx];
            if !advance_particle(p, map, dt, speed, &commons, meet_radius, meeting) {
                stuck.push(Unreachable { subject: p.subject, rank: p.rank });
            }
        }
        stuck
    }

    /// Mark Unknown cells within `radii[j]` of each common particle as
    /// believed Free. Rays are cast on `map` so that known obstacles still
    /// shadow.
    pub fn mark_believed_coverage(&self, map: &mut OccupancyGrid, radii: &[f64]) {
        let free = map.params().free_threshold - 0.5;
        for j in 0..self.n_robots() {
            let radius = radii[j];
            let pose = self.common(j).pose;
            let Some(origin) = map.cell_at(pose) else { continue };
            let span = (radius / map.resolution()).ceil() as i64 + 1;
            for dy in -span..=span {
                for dx in -span..=span {
                    let (x, y) = (origin.x as i64 + dx, origin.y as i64 + dy);
                    if !map.in_bounds(x, y) {
                        continue;
                    }
                    let c = Cell::new(x as usize, y as usize);
                    if map.class(c) != CellClass::Unknown || map.center(c).dist(pose) > radius {
                        continue;
                    }
                    if crate::gridworld::line_of_sight(map, origin, c) {
                        map.set_log_odds(c, free);
                    }
                }
            }
        }
    }

    pub fn trace_rows(&self, tick: u64) -> Vec<TraceRow> {
        self.particles
            .iter()
            .map(|p| TraceRow {
                tick,
                owner: p.owner,
                subject: p.subject,
                rank: p.rank,
                x: p.pose.x,
                y: p.pose.y,
                status: p.status,
            })
            .collect()
    }
}

fn agenda_status(agenda: &VecDeque<AgendaItem>, rank: usize) -> Option<Status> {
    agenda.front().map(|item| match item {
        AgendaItem::Visit { task, .. } => Status::PerformingTask { task: *task },
        AgendaItem::Meet { subject } => Status::Gossiping { target: *subject, rank },
    })
}

/// Returns false when the current target is unreachable.
fn advance_particle(
    p: &mut Particle,
    map: &OccupancyGrid,
    dt: f64,
    speed: f64,
    commons: &[Vec2],
    meet_radius: f64,
    meeting: Option<Vec2>,
) -> bool {
    if p.wait_left > 0.0 {
        p.wait_left = (p.wait_left - dt).max(0.0);
        if p.wait_left <= 0.0 {
            p.agenda.pop_front();
            p.planned_for = None;
        }
        refresh_status(p, meeting);
        return true;
    }
    // finished meetings pop before choosing a target
    while let Some(AgendaItem::Meet { subject }) = p.agenda.front() {
        if p.pose.dist(commons[*subject]) <= meet_radius {
            p.agenda.pop_front();
            p.planned_for = None;
        } else {
            break;
        }
    }
    refresh_status(p, meeting);
    let target = match p.agenda.front() {
        Some(AgendaItem::Visit { position, .. }) => Some(*position),
        Some(AgendaItem::Meet { subject }) => Some(commons[*subject]),
        None => p.goal,
    };
    let Some(target) = target else {
        return true;
    };
    let target_cell = map.clamped_cell(target);
    if p.planned_for != Some(target_cell) {
        let start = nearest_open(map, p.pose);
        match plan_path(map, start, target_cell) {
            Some(path) => {
                let skip = usize::from(start == map.clamped_cell(p.pose));
                p.path = path.waypoints.iter().skip(skip).map(|&c| map.center(c)).collect();
                if let Some(last) = p.path.last_mut() {
                    *last = target;
                } else {
                    p.path.push(target);
                }
                p.stuck = false;
            }
            None => {
                p.path.clear();
                p.stuck = true;
            }
        }
        p.planned_for = Some(target_cell);
    } else if let Some(last) = p.path.last_mut() {
        // moving targets stay within the planned cell
        *last = target;
    }
    if p.stuck {
        return false;
    }
    let mut budget = speed * dt;
    while budget > 0.0 && !p.path.is_empty() {
        let w = p.path[0];
        let d = p.pose.dist(w);
        if d <= budget {
            p.pose = w;
            budget -= d;
            p.path.remove(0);
        } else {
            p.pose = p.pose.step_toward(w, budget);
            budget = 0.0;
        }
    }
    if p.path.is_empty() {
        if let Some(AgendaItem::Visit { dwell, .. }) = p.agenda.front() {
            if *dwell > 0.0 {
                p.wait_left = *dwell;
            } else {
                p.agenda.pop_front();
                p.planned_for = None;
            }
        }
    }
    refresh_status(p, meeting);
    true
}

/// The cell under `pose`, or the closest non-Occupied cell when a later map
/// update has put the pose inside an obstacle.
fn nearest_open(map: &OccupancyGrid, pose: Vec2) -> Cell {
    let here = map.clamped_cell(pose);
    if map.class(here) != CellClass::Occupied {
        return here;
    }
    let mut best: Option<(f64, Cell)> = None;
    for span in 1..=4i64 {
        for dy in -span..=span {
            for dx in -span..=span {
                let (x, y) = (here.x as i64 + dx, here.y as i64 + dy);
                if !map.in_bounds(x, y) {
                    continue;
                }
                let c = Cell::new(x as usize, y as usize);
                let d = map.center(c).dist(pose);
                if map.class(c) != CellClass::Occupied && best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, c));
                }
            }
        }
        if let Some((_, c)) = best {
            return c;
        }
    }
    here
}

fn refresh_status(p: &mut Particle, meeting: Option<Vec2>) {
    p.status = match agenda_status(&p.agenda, p.rank) {
        Some(s) => s,
        None => match meeting {
            Some(m) => {
                p.goal = Some(m);
                Status::AtMeeting
            }
            None => Status::Exploring,
        },
    };
}
