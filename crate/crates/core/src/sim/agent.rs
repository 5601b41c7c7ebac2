//! Per-robot simulation state and low-level navigation.

use std::collections::{BTreeSet, VecDeque};

use rand_chacha::ChaCha8Rng;

use crate::belief::{AgendaItem, BeliefStore};
use crate::domain::{RobotId, RobotSpec, Status, TaskId};
use crate::geom::Vec2;
use crate::gridworld::{apf_step, line_of_sight, plan_path, ApfGains, Cell, CellClass, KinematicState, OccupancyGrid};

pub(crate) struct Agent {
    pub spec: RobotSpec,
    pub state: KinematicState,
    /// Failure level; 1 while healthy.
    pub level: usize,
    pub local: OccupancyGrid,
    pub store: BeliefStore,
    pub known: BTreeSet<TaskId>,
    pub done: BTreeSet<TaskId>,
    /// The robot's own plan, which may differ from what its peers believe.
    pub agenda: VecDeque<AgendaItem>,
    /// Fallback destination after a search ran out of belief particles.
    pub rally: Option<Vec2>,
    pub status: Status,
    /// Off its empathy particle; must pick a rank it can rejoin.
    pub deviated: bool,
    /// Took part in a partial sync or changed plans privately since the last
    /// full announce.
    pub private_since_global: bool,
    pub exhausted: BTreeSet<RobotId>,
    /// Peers whose plan this robot learned in a partial sync; their
    /// particles are propagated locally instead of taken from the team's.
    pub private: BTreeSet<RobotId>,
    pub nav: Nav,
    pub distance: f64,
    pub rng: ChaCha8Rng,
}

impl Agent {
    pub fn pos(&self) -> Vec2 {
        self.state.position
    }

    pub fn cap(&self, speed_factors: &[f64]) -> f64 {
        self.spec.max_speed * speed_factors[self.level - 1]
    }
}

/// Cached local-map route toward a target cell.
#[derive(Default, Debug)]
pub(crate) struct Nav {
    target: Option<Cell>,
    version: u64,
    path: Vec<Vec2>,
}

impl Nav {
    pub fn clear(&mut self) {
        self.target = None;
        self.path.clear();
    }
}

fn occupied_near(map: &OccupancyGrid, p: Vec2, radius: f64) -> Vec<Vec2> {
    let Some(c) = map.cell_at(p) else { return Vec::new() };
    let span = (radius / map.resolution()).ceil() as i64;
    let mut out = Vec::new();
    for dy in -span..=span {
        for dx in -span..=span {
            let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
            if map.in_bounds(x, y) {
                let n = Cell::new(x as usize, y as usize);
                if map.class(n) == CellClass::Occupied && map.center(n).dist(p) < radius {
                    out.push(map.center(n));
                }
            }
        }
    }
    out
}

fn segment_clear(map: &OccupancyGrid, a: Vec2, b: Vec2) -> bool {
    let len = a.dist(b);
    let n = ((len / (map.resolution() * 0.25)).ceil() as usize).max(1);
    (0..=n).all(|k| map.cell_at(a + (b - a) * (k as f64 / n as f64)).is_none_or(|c| map.class(c) != CellClass::Occupied))
}

/// Replace a command whose step would enter a known obstacle: first by its
/// axis components, then by a step back to the middle of the current cell.
fn unblock(map: &OccupancyGrid, pos: Vec2, v: Vec2, dt: f64) -> Vec2 {
    let clear = |w: Vec2| segment_clear(map, pos, pos + w * dt);
    if clear(v) {
        return v;
    }
    let (vx, vy) = (Vec2::new(v.x, 0.0), Vec2::new(0.0, v.y));
    let (first, second) = if v.x.abs() >= v.y.abs() { (vx, vy) } else { (vy, vx) };
    for w in [first, second] {
        if w.norm() > 1e-9 && clear(w) {
            return w;
        }
    }
    let centre = map.center(map.clamped_cell(pos));
    ((centre - pos) / dt).clamp_norm(v.norm())
}

/// Velocity that follows a moving reference point exactly when it is in
/// reach and in sight, otherwise heads for it along a local-map route.
pub(crate) fn follow(nav: &mut Nav, map: &OccupancyGrid, pos: Vec2, target: Vec2, cap: f64, dt: f64) -> Vec2 {
    if segment_clear(map, pos, target) {
        nav.clear();
        let v = (target - pos) / dt;
        return v.clamp_norm(cap);
    }
    let v = route(nav, map, pos, target, cap, dt, false);
    unblock(map, pos, v, dt)
}

/// Velocity toward a fixed goal: planned route plus obstacle repulsion.
pub(crate) fn navigate(nav: &mut Nav, map: &OccupancyGrid, pos: Vec2, target: Vec2, cap: f64, dt: f64) -> Vec2 {
    if pos.dist(target) <= cap * dt && segment_clear(map, pos, target) {
        nav.clear();
        return (target - pos) / dt;
    }
    let v = route(nav, map, pos, target, cap, dt, true);
    unblock(map, pos, v, dt)
}

fn route(nav: &mut Nav, map: &OccupancyGrid, pos: Vec2, target: Vec2, cap: f64, dt: f64, repel: bool) -> Vec2 {
    let goal = map.clamped_cell(target);
    if nav.target != Some(goal) || nav.version != map.version() || nav.path.is_empty() {
        nav.target = Some(goal);
        nav.version = map.version();
        let start = map.clamped_cell(pos);
        nav.path = match plan_path(map, start, goal) {
            Some(p) => p.waypoints.iter().skip(1).map(|&c| map.center(c)).collect(),
            None => Vec::new(),
        };
        if let Some(last) = nav.path.last_mut() {
            *last = target;
        }
    }
    // skip waypoints already reached or visible past
    while nav.path.len() > 1 && (pos.dist(nav.path[0]) < map.resolution() * 0.3 || line_of_sight_pt(map, pos, nav.path[1])) {
        nav.path.remove(0);
    }
    let Some(&w) = nav.path.first() else {
        return Vec2::ZERO;
    };
    if !repel {
        return ((w - pos) / dt).clamp_norm(cap);
    }
    let gains = ApfGains { attractive: 1.0 / dt, ..ApfGains::default() };
    apf_step(pos, w, &occupied_near(map, pos, gains.influence), &gains, cap)
}

fn line_of_sight_pt(map: &OccupancyGrid, a: Vec2, b: Vec2) -> bool {
    line_of_sight(map, map.clamped_cell(a), map.clamped_cell(b)) && segment_clear(map, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::step_dynamics;
    use rand::SeedableRng;

    fn walled() -> OccupancyGrid {
        let mut g = OccupancyGrid::new(20, 20, 0.5, Vec2::ZERO).unwrap();
        for c in g.cells().collect::<Vec<_>>() {
            g.set_log_odds(c, -10.0);
        }
        for y in 0..16 {
            g.set_log_odds(Cell::new(10, y), 10.0);
        }
        g
    }

    #[test]
    fn follow_matches_a_reachable_reference_exactly() {
        let g = walled();
        let mut nav = Nav::default();
        let v = follow(&mut nav, &g, Vec2::new(1.0, 1.0), Vec2::new(1.1, 1.0), 2.0, 0.1);
        assert!((v.x - 1.0).abs() < 1e-9 && v.y.abs() < 1e-9);
    }

    #[test]
    fn corner_clipping_command_is_replaced() {
        let g = walled();
        // just left of the wall's top end, heading up-right through its corner
        let pos = Vec2::new(4.95, 7.9);
        assert!(!segment_clear(&g, pos, pos + Vec2::new(0.5, 0.2)));
        let v = unblock(&g, pos, Vec2::new(5.0, 2.0), 0.1);
        assert!(segment_clear(&g, pos, pos + v * 0.1));
        assert!(v.norm() > 0.0);
    }

    #[test]
    fn navigate_gets_around_a_wall() {
        let g = walled();
        let mut nav = Nav::default();
        let mut s = KinematicState { position: Vec2::new(2.25, 2.25), heading: 0.0, speed_cap: 2.0 };
        let goal = Vec2::new(8.25, 2.25);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..400 {
            let v = navigate(&mut nav, &g, s.position, goal, 2.0, 0.1);
            s = step_dynamics(&s, v, 0.0, 0.1, &g, &mut rng).state;
            if s.position.dist(goal) < 0.05 {
                break;
            }
        }
        assert!(s.position.dist(goal) < 0.05, "{:?}", s.position);
    }
}
