//! The fixed-tick simulation loop.

use std::collections::{BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::agent::{follow, navigate, Agent, Nav};
use super::connectivity::ConnectivityGraph;
use super::metrics::{EmpathyStats, RunMetrics};
use super::scenario::{Method, Scenario};
use super::trace::{mm, Trace};
use super::travel::GridTravel;
use crate::alloc::{ga_solve_threaded, AllocProblem, AllocRobot, AllocTask, Motion, TaskKind};
use crate::belief::{init_store, AgendaItem, BeliefStore};
use crate::coverage::{meeting_point, partition_frontiers, select_goal};
use crate::domain::{CapabilitySet, RobotId, Status, Task, TaskId, TaskPhase, task_progress};
use crate::epistemic::{Action, ActionKind, EpistemicState, Formula, Payload, World};
use crate::error::Result;
use crate::geom::{mean, Vec2};
use crate::gridworld::{extract_frontiers, sense_disk, step_dynamics, to_ascii, CellClass, KinematicState, OccupancyGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Worker threads for fitness evaluation; results do not depend on it.
    pub threads: usize,
    /// Overrides the scenario's time cap.
    pub time_cap: Option<f64>,
    /// Emit a `poses` record every tick.
    pub record_poses: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { threads: 1, time_cap: None, record_poses: false }
    }
}

/// Margin kept by the flock hold rule so that motion noise cannot split the team.
const FLOCK_MARGIN: f64 = 0.1;

pub(crate) struct Engine<'a> {
    sc: &'a Scenario,
    method: Method,
    dt: f64,
    res: f64,
    threads: usize,
    truth: OccupancyGrid,
    tasks: Vec<Task>,
    dwell: Vec<f64>,
    agents: Vec<Agent>,
    /// Map of the last full announce plus believed coverage since.
    common_map: OccupancyGrid,
    /// Shared particle set; every agent's store adopts it each tick.
    master: BeliefStore,
    goals: Vec<Option<usize>>,
    team_goal: Option<usize>,
    goals_dirty: bool,
    epi: EpistemicState,
    epi_dirty: bool,
    comps: Vec<BTreeSet<RobotId>>,
    label: Vec<usize>,
    prev: Vec<BTreeSet<RobotId>>,
    triggers: BTreeSet<RobotId>,
    applied: Vec<bool>,
    ga_rng: ChaCha8Rng,
    comm: Vec<f64>,
    /// Gathering radius for mission completion.
    rc: f64,
    tick: u64,
    trace: Trace,
    messages: u64,
    reallocations: usize,
    gossip_tasks: usize,
    empathy: EmpathyStats,
    coverage: Vec<f64>,
    free_total: usize,
    record_poses: bool,
    certain: bool,
    max_components: usize,
    failed_ever: Vec<bool>,
}

impl<'a> Engine<'a> {
    pub fn new(sc: &'a Scenario, opts: &RunOptions) -> Result<Self> {
        sc.validate()?;
        let method = sc.method;
        let truth = sc.truth_grid()?;
        let prior = sc.prior_grid()?;
        let specs = sc.specs();
        let starts = sc.starts();
        let n = specs.len();
        let stores = init_store(&specs, &starts, sc.n_ranks, &sc.speed_factors)?;
        let master = stores[0].clone();
        let agents: Vec<Agent> = stores
            .into_iter()
            .enumerate()
            .map(|(i, store)| Agent {
                spec: specs[i].clone(),
                state: KinematicState { position: starts[i], heading: 0.0, speed_cap: specs[i].max_speed },
                level: 1,
                local: prior.clone(),
                store,
                known: BTreeSet::new(),
                done: BTreeSet::new(),
                agenda: VecDeque::new(),
                rally: None,
                status: Status::Exploring,
                deviated: false,
                private_since_global: false,
                exhausted: BTreeSet::new(),
                private: BTreeSet::new(),
                nav: Nav::default(),
                distance: 0.0,
                rng: ChaCha8Rng::seed_from_u64(sc.seed ^ (i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
            })
            .collect();
        let comm: Vec<f64> = specs.iter().map(|s| if method == Method::Ideal { f64::INFINITY } else { s.comm_radius }).collect();
        let rc = specs.iter().map(|s| s.comm_radius).fold(f64::INFINITY, f64::min);
        let mut trace = Trace::default();
        trace.push(
            0,
            "start",
            json!({
                "scenario": sc.name,
                "method": method.name(),
                "seed": sc.seed,
                "robots": n,
                "tasks": sc.tasks.len(),
            }),
        );
        let free_total = truth.count(CellClass::Free);
        Ok(Engine {
            sc,
            method,
            dt: sc.tick,
            res: sc.resolution,
            threads: opts.threads.max(1),
            tasks: sc.tasks.clone(),
            dwell: vec![0.0; sc.tasks.len()],
            common_map: prior,
            master,
            goals: vec![None; n],
            team_goal: None,
            goals_dirty: true,
            epi: EpistemicState::certain(World::new(vec![Status::Exploring; n]), sc.n_ranks),
            epi_dirty: false,
            comps: Vec::new(),
            label: vec![0; n],
            prev: (0..n).map(|i| BTreeSet::from([i])).collect(),
            triggers: BTreeSet::new(),
            applied: vec![false; sc.failures.len()],
            ga_rng: ChaCha8Rng::seed_from_u64(sc.seed ^ 0x00A1_10C0),
            comm,
            rc,
            tick: 0,
            trace,
            messages: 0,
            reallocations: 0,
            gossip_tasks: 0,
            empathy: EmpathyStats::default(),
            coverage: Vec::new(),
            free_total,
            record_poses: opts.record_poses,
            certain: true,
            max_components: 1,
            failed_ever: vec![false; n],
            truth,
            agents,
        })
    }

    fn n(&self) -> usize {
        self.agents.len()
    }

    fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn run(mut self, time_cap: f64) -> Result<RunMetrics> {
        let max_ticks = (time_cap / self.dt).ceil() as u64;
        let mut completed = false;
        while self.tick < max_ticks {
            let done = self.step()?;
            self.tick += 1;
            if done {
                completed = true;
                break;
            }
        }
        Ok(self.finish(completed))
    }

    fn step(&mut self) -> Result<bool> {
        self.apply_failures();
        self.sense_and_discover()?;
        self.update_connectivity();
        self.sync_components()?;
        self.check_absence();
        self.reallocate()?;
        self.update_goals();
        self.propagate();
        self.control();
        self.progress_tasks()?;
        Ok(self.record_metrics())
    }

    fn perceive(&mut self, actor: RobotId, phi: Formula) {
        match self.epi.product_update(&Action { actor, kind: ActionKind::Perceive(phi) }) {
            Ok(next) => {
                self.epi = next;
                self.epi_dirty = true;
            }
            Err(e) => self.trace.push(self.tick, "epistemic_error", json!({"robot": actor, "error": e.to_string()})),
        }
    }

    fn apply_failures(&mut self) {
        let t = self.time();
        for (k, f) in self.sc.failures.iter().enumerate() {
            if self.applied[k] || f.time > t + 1e-9 {
                continue;
            }
            self.applied[k] = true;
            let a = &mut self.agents[f.robot];
            a.level = a.level.max(f.level);
            self.failed_ever[f.robot] = true;
            let rank = a.store.tracked().max(a.level);
            let _ = a.store.set_tracked(rank);
            self.trace.push(self.tick, "failure", json!({"robot": f.robot, "level": f.level}));
        }
    }

    fn sense_and_discover(&mut self) -> Result<()> {
        let mut events = Vec::new();
        for (i, a) in self.agents.iter_mut().enumerate() {
            let readings = sense_disk(&self.truth, a.pos(), a.spec.sense_radius);
            a.local.update(&readings)?;
            for t in &mut self.tasks {
                if a.known.contains(&t.id) || a.pos().dist(t.position) > a.spec.sense_radius {
                    continue;
                }
                a.known.insert(t.id);
                if t.phase == TaskPhase::Complete {
                    a.done.insert(t.id);
                    continue;
                }
                t.advance(TaskPhase::Discovered);
                events.push((i, t.id));
            }
        }
        for (i, t) in events {
            self.trace.push(self.tick, "discover", json!({"robot": i, "task": t}));
            self.perceive(i, Formula::present(t));
            self.triggers.insert(i);
        }
        Ok(())
    }

    fn update_connectivity(&mut self) {
        let poses: Vec<Vec2> = self.agents.iter().map(|a| a.pos()).collect();
        let g = ConnectivityGraph::with_radii(&poses, &self.comm);
        self.comps = g.components();
        self.label = g.labels();
        self.max_components = self.max_components.max(self.comps.len());
    }

    fn sync_components(&mut self) -> Result<()> {
        let n = self.n();
        for c in self.comps.clone() {
            if c.len() < 2 && n > 1 {
                continue;
            }
            let contact = c.iter().any(|&i| self.prev[i] != c);
            for &i in &c {
                if let Some(AgendaItem::Meet { subject }) = self.agents[i].agenda.front().cloned() {
                    if c.contains(&subject) {
                        let rank = self.agents[i].store.believed_rank(subject);
                        self.agents[i].agenda.pop_front();
                        self.agents[i].nav.clear();
                        self.trace.push(self.tick, "gossip", json!({"seeker": i, "target": subject, "rank": rank}));
                    }
                }
            }
            let first = *c.iter().next().expect("non-empty component");
            let mut merged = self.agents[first].local.clone();
            let mut known = BTreeSet::new();
            let mut done = BTreeSet::new();
            for &i in &c {
                merged.merge_max_confidence(&self.agents[i].local)?;
                known.extend(self.agents[i].known.iter().copied());
                done.extend(self.agents[i].done.iter().copied());
            }
            for &i in &c {
                let a = &mut self.agents[i];
                a.local.clone_from(&merged);
                a.known.clone_from(&known);
                a.done.clone_from(&done);
            }
            if c.len() == n {
                self.global_sync(contact)?;
            } else {
                self.local_sync(&c, contact);
            }
            if contact {
                self.messages += c.len() as u64;
                self.trace.push(self.tick, "sync", json!({"members": c, "global": c.len() == n}));
                if known.difference(&done).next().is_some() {
                    self.triggers.insert(first);
                }
            }
        }
        for i in 0..n {
            self.prev[i] = self.comps[self.label[i]].clone();
        }
        Ok(())
    }

    fn global_sync(&mut self, contact: bool) -> Result<()> {
        let n = self.n();
        self.common_map.clone_from(&self.agents[0].local);
        let announced: Vec<(RobotId, Vec2, Status)> = self.agents.iter().enumerate().map(|(j, a)| (j, a.pos(), a.status)).collect();
        for (j, a) in self.agents.iter().enumerate() {
            self.master.set_common_rank(j, a.level);
        }
        self.master.snap_to_truth(&announced);
        for j in 0..n {
            let items = self.particle_agenda(j);
            self.master.set_agenda(j, &items);
        }
        let levels: Vec<usize> = self.agents.iter().map(|a| a.level).collect();
        for a in &mut self.agents {
            for (j, &l) in levels.iter().enumerate() {
                a.store.set_believed_rank(j, l);
            }
            let _ = a.store.set_tracked(a.level);
            a.deviated = false;
            a.private_since_global = false;
            a.exhausted.clear();
            a.private.clear();
            a.rally = None;
        }
        self.goals_dirty = true;
        if contact || self.epi_dirty {
            let statuses = announced.iter().map(|&(j, _, s)| (j, s)).collect();
            let present = self.agents[0].known.difference(&self.agents[0].done).copied().collect();
            let action = Action { actor: 0, kind: ActionKind::Announce(Payload::Dispositions { statuses, present }) };
            self.epi = self.epi.product_update(&action)?;
            self.epi_dirty = false;
            self.certain &= self.epi.true_world_certain();
        }
        Ok(())
    }

    fn local_sync(&mut self, c: &BTreeSet<RobotId>, contact: bool) {
        let told: Vec<(Vec2, Status, usize, usize, Vec<AgendaItem>)> = self
            .agents
            .iter()
            .enumerate()
            .map(|(j, a)| (a.pos(), a.status, a.store.tracked(), a.level, self.particle_agenda(j)))
            .collect();
        for &i in c {
            let a = &mut self.agents[i];
            for &j in c {
                if i == j {
                    continue;
                }
                let (pose, status, tracked, level, ref items) = told[j];
                a.exhausted.remove(&j);
                if items.is_empty() {
                    a.private.remove(&j);
                } else {
                    a.private.insert(j);
                    a.store.set_common_rank(j, level);
                    a.store.snap_to_truth(&[(j, pose, status)]);
                    a.store.set_agenda(j, items);
                }
                a.store.set_believed_rank(j, tracked);
            }
            a.private_since_global = true;
        }
        if contact || self.epi_dirty {
            let statuses = c.iter().map(|&j| (j, self.agents[j].status)).collect();
            let first = *c.iter().next().expect("non-empty component");
            let present = self.agents[first].known.difference(&self.agents[first].done).copied().collect();
            match self.epi.local_announce(c, &Payload::Dispositions { statuses, present }) {
                Ok(next) => {
                    self.epi = next;
                    self.epi_dirty = false;
                }
                Err(e) => self.trace.push(self.tick, "epistemic_error", json!({"members": c, "error": e.to_string()})),
            }
        }
    }

    /// The robot's own plan as its peers will model it from now on.
    fn particle_agenda(&self, j: RobotId) -> Vec<AgendaItem> {
        let a = &self.agents[j];
        a.agenda
            .iter()
            .map(|item| match *item {
                AgendaItem::Visit { task, position, dwell } => {
                    let t = &self.tasks[task];
                    let left = if a.pos().dist(t.position) <= t.radius { (dwell - self.dwell[task]).max(0.0) } else { dwell };
                    AgendaItem::Visit { task, position, dwell: left }
                }
                AgendaItem::Meet { subject } => AgendaItem::Meet { subject },
            })
            .collect()
    }

    fn check_absence(&mut self) {
        let n = self.n();
        let n_ranks = self.sc.n_ranks;
        for i in 0..n {
            for j in 0..n {
                if self.label[i] == self.label[j] || self.agents[i].exhausted.contains(&j) {
                    continue;
                }
                let b = self.agents[i].store.believed_rank(j);
                let believed = self.agents[i].store.particle(j, b).pose;
                let threshold = self.comm[i].min(self.comm[j]) - self.res;
                if self.agents[i].pos().dist(believed) > threshold {
                    continue;
                }
                if b < n_ranks {
                    let _ = self.agents[i].store.advance_belief_rank(j);
                    self.trace.push(self.tick, "absence", json!({"observer": i, "subject": j, "rank": b}));
                    self.perceive(i, Formula::track(j, b).not());
                } else {
                    let rally = meeting_point(&self.common_map, &self.master.common_poses());
                    let a = &mut self.agents[i];
                    a.exhausted.insert(j);
                    if matches!(a.agenda.front(), Some(AgendaItem::Meet { subject }) if *subject == j) {
                        a.agenda.pop_front();
                        a.nav.clear();
                        a.rally = rally;
                    }
                    self.trace.push(self.tick, "exhausted", json!({"observer": i, "subject": j}));
                }
                self.triggers.insert(i);
            }
        }
    }

    fn reallocate(&mut self) -> Result<()> {
        let comps: BTreeSet<usize> = self.triggers.iter().map(|&i| self.label[i]).collect();
        self.triggers.clear();
        for k in comps {
            let c = self.comps[k].clone();
            self.plan_component(&c)?;
        }
        Ok(())
    }

    fn plan_component(&mut self, c: &BTreeSet<RobotId>) -> Result<()> {
        let n = self.n();
        let leader = *c.iter().next().expect("non-empty component");
        let global = c.len() == n;
        let open: Vec<TaskId> = {
            let l = &self.agents[leader];
            l.known.difference(&l.done).copied().collect()
        };
        if open.is_empty() {
            for &i in c {
                self.agents[i].agenda.clear();
            }
            return Ok(());
        }
        let mut robots = Vec::with_capacity(n);
        let mut gossip = Vec::new();
        let lstore = &self.agents[leader].store;
        for (r, a) in self.agents.iter().enumerate() {
            let cap = a.cap(&self.sc.speed_factors);
            if c.contains(&r) {
                robots.push(AllocRobot { id: r, capability: a.spec.capability, position: a.pos(), speed: cap, ready_at: 0.0 });
                continue;
            }
            let b = lstore.believed_rank(r);
            let p = lstore.particle(r, b);
            let speed = lstore.particle_speed(r, b);
            let lost = self.agents[leader].exhausted.contains(&r);
            let capability = if lost { CapabilitySet::empty() } else { a.spec.capability };
            robots.push(AllocRobot { id: r, capability, position: p.pose, speed, ready_at: 0.0 });
            if !lost {
                let mut path = vec![p.pose];
                path.extend(p.path.iter().copied());
                gossip.push(AllocTask {
                    kind: TaskKind::Gossip { target: r },
                    position: p.pose,
                    required: vec![0; self.sc.n_kinds],
                    duration: 0.0,
                    motion: Some(Motion { path, speed }),
                });
            }
        }
        let mut tasks: Vec<AllocTask> =
            open.iter().map(|&t| AllocTask::real(t, self.tasks[t].position, self.tasks[t].required.clone(), self.tasks[t].duration)).collect();
        let n_gossip = gossip.len();
        tasks.extend(gossip);
        let problem = AllocProblem::new(robots, tasks, c.clone(), self.sc.n_kinds)?;
        let travel = GridTravel::new(self.agents[leader].local.clone());
        let mut anchors: Vec<Vec2> = open.iter().map(|&t| self.tasks[t].position).collect();
        anchors.extend(c.iter().map(|&r| self.agents[r].pos()));
        travel.warm(&anchors);
        match ga_solve_threaded(&problem, &self.sc.ga, &travel, &mut self.ga_rng, self.threads) {
            Ok(res) => {
                self.reallocations += 1;
                self.gossip_tasks += n_gossip;
                let mut plan = Vec::new();
                for r in 0..n {
                    let items: Vec<AgendaItem> = res.policy.sequences[r]
                        .iter()
                        .map(|&t| match problem.tasks[t].kind {
                            TaskKind::Real(id) => AgendaItem::Visit { task: id, position: self.tasks[id].position, dwell: self.tasks[id].duration },
                            TaskKind::Gossip { target } => AgendaItem::Meet { subject: target },
                        })
                        .collect();
                    plan.push(items.iter().map(label).collect::<Vec<String>>());
                    if !c.contains(&r) {
                        continue;
                    }
                    let a = &mut self.agents[r];
                    let changed = a.agenda.iter().cloned().collect::<Vec<_>>() != items;
                    a.agenda = items.into_iter().collect();
                    if changed {
                        a.nav.clear();
                        a.rally = None;
                    }
                    if !global && changed {
                        a.private_since_global = true;
                    }
                }
                if global {
                    for j in 0..n {
                        let items = self.particle_agenda(j);
                        self.master.set_agenda(j, &items);
                    }
                }
                self.trace.push(
                    self.tick,
                    "allocate",
                    json!({"leader": leader, "members": c, "tasks": open, "plan": plan, "fitness": mm(res.policy.fitness)}),
                );
            }
            Err(e) => {
                self.trace.push(self.tick, "allocate_failed", json!({"leader": leader, "members": c, "error": e.to_string()}));
            }
        }
        Ok(())
    }

    fn update_goals(&mut self) {
        let n = self.n();
        let radii: Vec<f64> = self.agents.iter().map(|a| a.spec.sense_radius).collect();
        self.master.mark_believed_coverage(&mut self.common_map, &radii);
        let frontiers = extract_frontiers(&self.common_map);
        if frontiers.is_empty() {
            if self.master.meeting().is_none() {
                if let Some(m) = meeting_point(&self.common_map, &self.master.common_poses()) {
                    self.master.set_meeting(Some(m));
                    self.trace.push(self.tick, "meeting", json!({"x": mm(m.x), "y": mm(m.y)}));
                }
            }
            self.goals = vec![None; n];
            self.team_goal = None;
            return;
        }
        if self.master.meeting().is_some() {
            self.master.set_meeting(None);
        }
        if self.method == Method::Flock {
            self.flock_goals(&frontiers);
            return;
        }
        let poses = self.master.common_poses();
        let mut regions = None;
        for j in 0..n {
            let p = self.master.common(j);
            if !p.agenda.is_empty() || p.status == Status::AtMeeting {
                continue;
            }
            let valid = self.goals[j].is_some_and(|g| frontiers.contains(&g));
            if valid && !self.goals_dirty {
                continue;
            }
            let regions = regions.get_or_insert_with(|| {
                let weights: Vec<f64> = self.agents.iter().map(|a| a.spec.partition_weight).collect();
                partition_frontiers(&self.common_map, &frontiers, &poses, &weights)
            });
            let g = select_goal(&self.common_map, p.pose, &regions[j], &frontiers, self.agents[j].spec.max_speed);
            self.goals[j] = g;
            let centre = g.map(|g| self.common_map.center(self.common_map.cell_of(g)));
            self.master.set_goal(j, centre);
        }
        self.goals_dirty = false;
    }

    /// One shared destination: the first pending task of the lowest-id robot
    /// that has one, otherwise the frontier best for robot 0.
    fn flock_goals(&mut self, frontiers: &BTreeSet<usize>) {
        let n = self.n();
        let task_target = self.agents.iter().find_map(|a| match a.agenda.front() {
            Some(AgendaItem::Visit { position, .. }) => Some(*position),
            _ => None,
        });
        let target = match task_target {
            Some(t) => Some(t),
            None => {
                let valid = self.team_goal.is_some_and(|g| frontiers.contains(&g));
                if !valid || self.goals_dirty {
                    let lead = self.master.common(0).pose;
                    self.team_goal = select_goal(&self.common_map, lead, frontiers, frontiers, self.agents[0].spec.max_speed);
                }
                self.team_goal.map(|g| self.common_map.center(self.common_map.cell_of(g)))
            }
        };
        for j in 0..n {
            self.master.set_goal(j, target);
        }
        self.goals_dirty = false;
    }

    fn propagate(&mut self) {
        let meet = self.rc - self.res;
        self.master.propagate(&self.common_map, self.dt, meet);
        for a in &mut self.agents {
            // a finished private plan falls back to the team's particle
            let store = &a.store;
            a.private.retain(|&j| !store.particle(j, store.believed_rank(j)).agenda.is_empty() || store.particle(j, store.believed_rank(j)).wait_left > 0.0);
            a.store.adopt_particles_except(&self.master, &a.private);
            if !a.private.is_empty() {
                a.store.propagate_subjects(&a.local, self.dt, meet, &a.private);
            }
        }
    }

    fn control(&mut self) {
        let n = self.n();
        let mut positions: Vec<Vec2> = self.agents.iter().map(|a| a.pos()).collect();
        for i in 0..n {
            let cap = self.agents[i].cap(&self.sc.speed_factors);
            self.agents[i].state.speed_cap = cap;
            let mut v = self.decide(i, cap);
            if self.method == Method::Flock && n > 1 {
                v = self.hold_rule(i, v, cap, &positions);
            }
            let a = &mut self.agents[i];
            let out = step_dynamics(&a.state, v, self.sc.noise_std, self.dt, &self.truth, &mut a.rng);
            if out.collided {
                bump(&mut a.local, &self.truth, a.state.position, v, self.dt);
            }
            a.distance += out.state.position.dist(a.state.position);
            a.state = out.state;
            positions[i] = a.pos();
        }
    }

    fn decide(&mut self, i: RobotId, cap: f64) -> Vec2 {
        let dt = self.dt;
        loop {
            let front = self.agents[i].agenda.front().cloned();
            match front {
                Some(AgendaItem::Visit { task, position, .. }) => {
                    let a = &mut self.agents[i];
                    if a.done.contains(&task) {
                        a.agenda.pop_front();
                        a.nav.clear();
                        continue;
                    }
                    a.status = Status::PerformingTask { task };
                    a.deviated = true;
                    if a.pos().dist(position) <= self.tasks[task].radius * 0.5 {
                        return Vec2::ZERO;
                    }
                    let pos = a.pos();
                    return navigate(&mut a.nav, &a.local, pos, position, cap, dt);
                }
                Some(AgendaItem::Meet { subject }) => {
                    let a = &mut self.agents[i];
                    let rank = a.store.believed_rank(subject);
                    let target = a.store.particle(subject, rank).pose;
                    a.status = Status::Gossiping { target: subject, rank };
                    a.deviated = true;
                    let pos = a.pos();
                    return navigate(&mut a.nav, &a.local, pos, target, cap, dt);
                }
                None => break,
            }
        }
        let res = self.res;
        let a = &mut self.agents[i];
        if let Some(r) = a.rally {
            if a.pos().dist(r) > res {
                a.status = Status::AtMeeting;
                a.deviated = true;
                let pos = a.pos();
                return navigate(&mut a.nav, &a.local, pos, r, cap, dt);
            }
            a.rally = None;
        }
        self.select_rank(i, cap);
        let a = &mut self.agents[i];
        let rank = a.store.tracked();
        let p = a.store.particle(i, rank);
        let target = p.pose;
        a.status = if p.status == Status::AtMeeting { Status::AtMeeting } else { Status::Exploring };
        let pos = a.pos();
        if pos.dist(target) <= res {
            a.deviated = false;
        }
        follow(&mut a.nav, &a.local, pos, target, cap, dt)
    }

    /// Keep the current empathy rank while it can still be rejoined,
    /// otherwise move to the most likely rank that can.
    fn select_rank(&mut self, i: RobotId, cap: f64) {
        let (res, dt) = (self.res, self.dt);
        let a = &mut self.agents[i];
        let pos = a.pos();
        let current = a.store.tracked().max(a.level);
        let n_ranks = a.store.n_ranks();
        let feasible: BTreeSet<usize> = (current..=n_ranks)
            .filter(|&b| {
                let p = a.store.particle(i, b);
                let speed = a.store.particle_speed(i, b);
                pos.dist(p.pose) <= cap * dt + res || p.is_idle() || speed < cap - 1e-9 || approaching(p.pose, &p.path, pos, res)
            })
            .collect();
        let rank = a.store.select_tracked(&feasible).unwrap_or(n_ranks);
        if rank != a.store.tracked() {
            let _ = a.store.set_tracked(rank);
            a.deviated = true;
            self.trace.push(self.tick, "track", json!({"robot": i, "rank": rank}));
        }
    }

    /// Flock rule: a move that would split the team is replaced by a step
    /// toward the others, or by holding still.
    fn hold_rule(&self, i: RobotId, v: Vec2, cap: f64, positions: &[Vec2]) -> Vec2 {
        let radii: Vec<f64> = self.comm.iter().map(|r| r - FLOCK_MARGIN).collect();
        let mut trial = positions.to_vec();
        let ok = |trial: &[Vec2]| ConnectivityGraph::with_radii(trial, &radii).components().len() == 1;
        trial[i] = positions[i] + v * self.dt;
        if ok(&trial) {
            return v;
        }
        let others: Vec<Vec2> = positions.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &p)| p).collect();
        if let Some(c) = mean(&others) {
            let w = ((c - positions[i]) / self.dt).clamp_norm(cap);
            trial[i] = positions[i] + w * self.dt;
            if ok(&trial) && !self.truth.blocked(trial[i]) {
                return w;
            }
        }
        Vec2::ZERO
    }

    fn progress_tasks(&mut self) -> Result<()> {
        for k in 0..self.tasks.len() {
            let phase = self.tasks[k].phase;
            if !matches!(phase, TaskPhase::Discovered | TaskPhase::InProgress) {
                continue;
            }
            let id = self.tasks[k].id;
            let workers: Vec<RobotId> =
                (0..self.n()).filter(|&i| self.agents[i].status == Status::PerformingTask { task: id }).collect();
            let assigned: Vec<(Vec2, CapabilitySet)> = workers.iter().map(|&i| (self.agents[i].pos(), self.agents[i].spec.capability)).collect();
            let (next, dwell) = task_progress(&self.tasks[k], &assigned, self.dwell[k], self.dt)?;
            self.dwell[k] = dwell;
            if next == phase {
                continue;
            }
            self.tasks[k].advance(next);
            let present: Vec<RobotId> =
                workers.iter().copied().filter(|&i| self.agents[i].pos().dist(self.tasks[k].position) <= self.tasks[k].radius).collect();
            if next == TaskPhase::InProgress {
                self.trace.push(self.tick, "task_start", json!({"task": id, "robots": present}));
            }
            if next == TaskPhase::Complete {
                if phase == TaskPhase::Discovered {
                    self.trace.push(self.tick, "task_start", json!({"task": id, "robots": present}));
                }
                self.trace.push(self.tick, "task_complete", json!({"task": id, "robots": present}));
                for &i in &present {
                    self.agents[i].done.insert(id);
                }
            }
        }
        Ok(())
    }

    fn union_map(&self) -> OccupancyGrid {
        let mut u = self.agents[0].local.clone();
        if self.comps.len() > 1 {
            for a in &self.agents[1..] {
                u.merge_max_confidence(&a.local).expect("maps share a shape");
            }
        }
        u
    }

    fn coverage_of(&self, union: &OccupancyGrid) -> f64 {
        let known = (0..union.len()).filter(|&k| union.class_at(k) == CellClass::Free && self.truth.class_at(k) == CellClass::Free).count();
        known as f64 / self.free_total.max(1) as f64
    }

    fn record_metrics(&mut self) -> bool {
        let n = self.n();
        let union = self.union_map();
        let steps_per_second = (1.0 / self.dt).round().max(1.0) as u64;
        if self.tick % steps_per_second == 0 {
            let c = self.coverage_of(&union);
            self.coverage.push(c);
        }
        for j in 0..n {
            if self.failed_ever[j] {
                continue;
            }
            let apart = (0..n).any(|i| self.label[i] != self.label[j]);
            if apart {
                let err = self.agents[j].pos().dist(self.master.common(j).pose);
                let on_plan = !self.agents[j].private_since_global;
                self.empathy.sample(err, self.res, on_plan);
            }
        }
        if self.record_poses {
            let poses: Vec<Value> = self
                .agents
                .iter()
                .map(|a| json!([mm(a.pos().x), mm(a.pos().y), a.store.tracked(), a.status.to_string()]))
                .collect();
            self.trace.push(self.tick, "poses", Value::Array(poses));
        }
        if self.tasks.iter().any(|t| t.phase != TaskPhase::Complete) {
            return false;
        }
        if !extract_frontiers(&union).is_empty() {
            return false;
        }
        let pts: Vec<Vec2> = self.agents.iter().map(|a| a.pos()).collect();
        let centre = mean(&pts).expect("at least one robot");
        pts.iter().all(|p| p.dist(centre) <= self.rc)
    }

    fn finish(mut self, completed: bool) -> RunMetrics {
        let mission_time = self.time();
        let union = self.union_map();
        let last = self.coverage_of(&union);
        self.coverage.push(last);
        self.trace.push(
            self.tick,
            "end",
            json!({"completed": completed, "time": mm(mission_time), "distance": self.agents.iter().map(|a| mm(a.distance)).collect::<Vec<_>>()}),
        );
        let rows: Vec<String> = to_ascii(&union).lines().map(str::to_string).collect();
        let truth_rows: Vec<String> = to_ascii(&self.truth).lines().map(str::to_string).collect();
        let poses: Vec<Value> = self.agents.iter().map(|a| json!([mm(a.pos().x), mm(a.pos().y)])).collect();
        self.trace.push(
            self.tick,
            "map",
            json!({"resolution": self.res, "known": rows, "truth": truth_rows, "poses": poses}),
        );
        let coverage_auc = if self.coverage.is_empty() { 0.0 } else { self.coverage.iter().sum::<f64>() / self.coverage.len() as f64 };
        RunMetrics {
            scenario: self.sc.name.clone(),
            method: self.method,
            seed: self.sc.seed,
            faults: self.sc.failures.len(),
            completed,
            mission_time,
            coverage: self.coverage,
            coverage_auc,
            distance: self.agents.iter().map(|a| a.distance).collect(),
            messages: self.messages,
            tasks_completed: self.tasks.iter().filter(|t| t.phase == TaskPhase::Complete).count(),
            n_tasks: self.tasks.len(),
            reallocations: self.reallocations,
            gossip_tasks: self.gossip_tasks,
            empathy: self.empathy,
            certain_after_announce: self.certain,
            max_components: self.max_components,
            trace: self.trace,
        }
    }
}

/// A rejected step reveals the first obstacle cell on the commanded segment.
fn bump(local: &mut OccupancyGrid, truth: &OccupancyGrid, from: Vec2, v: Vec2, dt: f64) {
    let to = truth.clamp_point(from + v * dt);
    let n = ((from.dist(to) / (truth.resolution() * 0.25)).ceil() as usize).max(1);
    let hit = (1..=n).map(|k| from + (to - from) * (k as f64 / n as f64)).find(|&p| truth.blocked(p));
    if let Some(cell) = hit.and_then(|p| truth.cell_at(p)) {
        if local.class(cell) != CellClass::Occupied {
            let l = local.params().l_max;
            local.set_log_odds(cell, l);
        }
    }
}

fn label(item: &AgendaItem) -> String {
    match item {
        AgendaItem::Visit { task, .. } => format!("task:{task}"),
        AgendaItem::Meet { subject } => format!("gossip:{subject}"),
    }
}

/// Whether `pos` lies within `tol` of the polyline the particle is about to
/// travel.
fn approaching(from: Vec2, path: &[Vec2], pos: Vec2, tol: f64) -> bool {
    let mut a = from;
    for &b in path {
        let ab = b - a;
        let len2 = ab.dot(ab);
        let t = if len2 > 0.0 { ((pos - a).dot(ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
        if (a + ab * t).dist(pos) <= tol {
            return true;
        }
        a = b;
    }
    from.dist(pos) <= tol
}

#[cfg(test)]
mod tests {
    use super::super::generate::{gen_random_env, parse_team, with_faults, EnvParams};
    use super::super::run_scenario;
    use super::super::scenario::tests::tiny;
    use super::*;

    fn desk(seed: u64, method: Method) -> Scenario {
        let mut sc = gen_random_env(&EnvParams::desk(parse_team("2ugv,1uav").unwrap()), seed).unwrap();
        sc.method = method;
        sc
    }

    #[test]
    fn single_robot_on_a_tiny_map_finishes_with_full_coverage() {
        let m = run_scenario(&tiny(), &RunOptions::default()).unwrap();
        assert!(m.completed, "{}", m.trace.to_ndjson());
        assert_eq!(*m.coverage.last().unwrap(), 1.0);
    }

    #[test]
    fn runs_repeat_exactly() {
        let sc = with_faults(&desk(4, Method::Proposed), 1, 4).unwrap();
        let a = run_scenario(&sc, &RunOptions::default()).unwrap();
        let b = run_scenario(&sc, &RunOptions { threads: 3, ..RunOptions::default() }).unwrap();
        assert_eq!(a.trace.to_ndjson(), b.trace.to_ndjson());
        assert_eq!(a, b);
    }

    #[test]
    fn methods_complete_a_desk_scenario() {
        for method in Method::ALL {
            let m = run_scenario(&desk(1, method), &RunOptions::default()).unwrap();
            assert!(m.completed, "{method:?} {}", m.mission_time);
            assert_eq!(m.tasks_completed, m.n_tasks);
            match method {
                Method::Flock => assert_eq!(m.max_components, 1),
                Method::Ideal => {
                    assert_eq!(m.gossip_tasks, 0);
                    assert!(m.certain_after_announce);
                }
                Method::Proposed => {}
            }
        }
    }
}
