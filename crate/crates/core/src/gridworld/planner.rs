use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Cell, CellClass, OccupancyGrid};

/// Unknown cells are traversable at this multiple of the geometric cost.
pub const UNKNOWN_COST_FACTOR: f64 = 3.0;

const MOVES: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Result of [`plan_path`].
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedPath {
    /// Raw 8-connected A* cell sequence, start to goal inclusive.
    pub raw: Vec<Cell>,
    /// Waypoints left after string-pulling, start to goal inclusive.
    pub waypoints: Vec<Cell>,
    /// A* cost of the raw path, meters weighted by the Unknown factor.
    pub cost: f64,
}

impl PlannedPath {
    /// Geometric length of the string-pulled polyline in meters.
    pub fn length(&self, grid: &OccupancyGrid) -> f64 {
        self.waypoints.windows(2).map(|w| grid.center(w[0]).dist(grid.center(w[1]))).sum()
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Open {
    f: f64,
    idx: usize,
}

impl Eq for Open {}

impl Ord for Open {
    // min-heap on f, then on cell index
    fn cmp(&self, other: &Self) -> Ordering {
        other.f.total_cmp(&self.f).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn step_cost(grid: &OccupancyGrid, to: usize, diagonal: bool) -> f64 {
    let base = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 } * grid.resolution();
    match grid.class_at(to) {
        CellClass::Unknown => base * UNKNOWN_COST_FACTOR,
        _ => base,
    }
}

/// Traversable successors of `idx` with their step costs. Diagonal moves may
/// not cut the corner of an Occupied cell.
fn successors(grid: &OccupancyGrid, idx: usize, out: &mut Vec<(usize, f64)>) {
    out.clear();
    let c = grid.cell_of(idx);
    let w = grid.width();
    for &(dx, dy) in &MOVES {
        let (nx, ny) = (c.x as i64 + dx, c.y as i64 + dy);
        if !grid.in_bounds(nx, ny) {
            continue;
        }
        let n = ny as usize * w + nx as usize;
        if grid.is_occupied_at(n) {
            continue;
        }
        let diagonal = dx != 0 && dy != 0;
        if diagonal {
            let side_a = c.y * w + nx as usize;
            let side_b = ny as usize * w + c.x;
            if grid.is_occupied_at(side_a) || grid.is_occupied_at(side_b) {
                continue;
            }
        }
        out.push((n, step_cost(grid, n, diagonal)));
    }
}

fn octile(grid: &OccupancyGrid, a: Cell, b: Cell) -> f64 {
    let dx = (a.x as f64 - b.x as f64).abs();
    let dy = (a.y as f64 - b.y as f64).abs();
    let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
    (hi - lo + lo * std::f64::consts::SQRT_2) * grid.resolution()
}

/// 8-connected A* over non-Occupied cells followed by string-pulling.
/// Returns `None` when the goal is Occupied or disconnected from the start.
pub fn plan_path(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Option<PlannedPath> {
    let s = grid.index(start);
    let g = grid.index(goal);
    if grid.is_occupied_at(g) || grid.is_occupied_at(s) {
        return None;
    }
    if s == g {
        return Some(PlannedPath { raw: vec![start], waypoints: vec![start], cost: 0.0 });
    }
    let n = grid.len();
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let mut succ = Vec::with_capacity(8);
    cost[s] = 0.0;
    open.push(Open { f: octile(grid, start, goal), idx: s });
    while let Some(Open { idx, .. }) = open.pop() {
        if closed[idx] {
            continue;
        }
        if idx == g {
            break;
        }
        closed[idx] = true;
        successors(grid, idx, &mut succ);
        for &(nb, c) in &succ {
            let cand = cost[idx] + c;
            if cand < cost[nb] {
                cost[nb] = cand;
                parent[nb] = idx;
                open.push(Open { f: cand + octile(grid, grid.cell_of(nb), goal), idx: nb });
            }
        }
    }
    if !cost[g].is_finite() {
        return None;
    }
    let mut raw = vec![goal];
    let mut at = g;
    while at != s {
        at = parent[at];
        raw.push(grid.cell_of(at));
    }
    raw.reverse();
    let waypoints = string_pull(grid, &raw);
    Some(PlannedPath { raw, waypoints, cost: cost[g] })
}

/// Single-source costs to every cell under the planner's cost model
/// (`f64::INFINITY` where unreachable).
pub fn distance_field(grid: &OccupancyGrid, source: Cell) -> Vec<f64> {
    let n = grid.len();
    let mut cost = vec![f64::INFINITY; n];
    let s = grid.index(source);
    if grid.is_occupied_at(s) {
        return cost;
    }
    let mut open = BinaryHeap::new();
    let mut succ = Vec::with_capacity(8);
    cost[s] = 0.0;
    open.push(Open { f: 0.0, idx: s });
    while let Some(Open { f, idx }) = open.pop() {
        if f > cost[idx] {
            continue;
        }
        successors(grid, idx, &mut succ);
        for &(nb, c) in &succ {
            let cand = f + c;
            if cand < cost[nb] {
                cost[nb] = cand;
                open.push(Open { f: cand, idx: nb });
            }
        }
    }
    cost
}

/// Walk the cells crossed by the segment between two cell centers. Where the
/// segment passes exactly through a corner both side cells are visited.
/// Stops early when `visit` returns false; the return value says whether the
/// walk completed.
fn traverse(a: Cell, b: Cell, mut visit: impl FnMut(Cell) -> bool) -> bool {
    let (mut x, mut y) = (a.x as i64, a.y as i64);
    let (bx, by) = (b.x as i64, b.y as i64);
    let (dx, dy) = ((bx - x).abs(), (by - y).abs());
    let (sx, sy) = ((bx - x).signum(), (by - y).signum());
    // boundary crossings compared as (2i+1)/dx vs (2j+1)/dy without division
    let (mut i, mut j) = (0i64, 0i64);
    if !visit(a) {
        return false;
    }
    while x != bx || y != by {
        let lhs = (2 * i + 1) * dy;
        let rhs = (2 * j + 1) * dx;
        if dy == 0 || (dx != 0 && lhs < rhs) {
            x += sx;
            i += 1;
        } else if dx == 0 || rhs < lhs {
            y += sy;
            j += 1;
        } else {
            if !visit(Cell::new((x + sx) as usize, y as usize)) || !visit(Cell::new(x as usize, (y + sy) as usize)) {
                return false;
            }
            x += sx;
            y += sy;
            i += 1;
            j += 1;
        }
        if !visit(Cell::new(x as usize, y as usize)) {
            return false;
        }
    }
    true
}

/// True when the straight segment between the two cell centers touches no
/// Occupied cell.
pub fn line_of_sight(grid: &OccupancyGrid, a: Cell, b: Cell) -> bool {
    traverse(a, b, |c| grid.class(c) != CellClass::Occupied)
}

/// Cells on the segment between two cell centers, in order.
pub(crate) fn ray_cells(a: Cell, b: Cell) -> Vec<Cell> {
    let mut out = Vec::new();
    traverse(a, b, |c| {
        out.push(c);
        true
    });
    out
}

/// Greedy string-pulling: from each anchor jump to the farthest later
/// waypoint still in line of sight.
pub fn string_pull(grid: &OccupancyGrid, raw: &[Cell]) -> Vec<Cell> {
    if raw.len() <= 2 {
        return raw.to_vec();
    }
    let mut out = vec![raw[0]];
    let mut anchor = 0;
    while anchor < raw.len() - 1 {
        let mut next = anchor + 1;
        for k in (anchor + 2..raw.len()).rev() {
            if line_of_sight(grid, raw[anchor], raw[k]) {
                next = k;
                break;
            }
        }
        out.push(raw[next]);
        anchor = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Vec2;
    use proptest::prelude::*;

    fn free_grid(w: usize, h: usize) -> OccupancyGrid {
        let mut g = OccupancyGrid::new(w, h, 0.5, Vec2::ZERO).unwrap();
        for c in g.cells().collect::<Vec<_>>() {
            g.set_log_odds(c, -3.0);
        }
        g
    }

    fn block(g: &mut OccupancyGrid, c: Cell) {
        g.set_log_odds(c, 3.0);
    }

    /// Bellman-Ford style relaxation to a fixpoint; independent of the heap.
    fn oracle_costs(g: &OccupancyGrid, s: Cell) -> Vec<f64> {
        let mut d = vec![f64::INFINITY; g.len()];
        if g.class(s) == CellClass::Occupied {
            return d;
        }
        d[g.index(s)] = 0.0;
        loop {
            let mut changed = false;
            for idx in 0..g.len() {
                if !d[idx].is_finite() {
                    continue;
                }
                let c = g.cell_of(idx);
                for (dx, dy) in MOVES {
                    let (nx, ny) = (c.x as i64 + dx, c.y as i64 + dy);
                    if !g.in_bounds(nx, ny) {
                        continue;
                    }
                    let nc = Cell::new(nx as usize, ny as usize);
                    if g.class(nc) == CellClass::Occupied {
                        continue;
                    }
                    let diag = dx != 0 && dy != 0;
                    if diag
                        && (g.class(Cell::new(nx as usize, c.y)) == CellClass::Occupied
                            || g.class(Cell::new(c.x, ny as usize)) == CellClass::Occupied)
                    {
                        continue;
                    }
                    let mut step = if diag { 2f64.sqrt() } else { 1.0 } * g.resolution();
                    if g.class(nc) == CellClass::Unknown {
                        step *= 3.0;
                    }
                    let n = g.index(nc);
                    if d[idx] + step < d[n] - 1e-12 {
                        d[n] = d[idx] + step;
                        changed = true;
                    }
                }
            }
            if !changed {
                return d;
            }
        }
    }

    #[test]
    fn start_equals_goal() {
        let g = free_grid(3, 3);
        let p = plan_path(&g, Cell::new(1, 1), Cell::new(1, 1)).unwrap();
        assert_eq!(p.raw, vec![Cell::new(1, 1)]);
        assert_eq!(p.cost, 0.0);
    }

    #[test]
    fn open_diagonal_pulls_to_straight_line() {
        let g = free_grid(5, 5);
        let p = plan_path(&g, Cell::new(0, 0), Cell::new(4, 4)).unwrap();
        let expected = 4.0 * 2f64.sqrt() * 0.5;
        assert!((p.cost - oracle_costs(&g, Cell::new(0, 0))[g.index(Cell::new(4, 4))]).abs() < 1e-9);
        assert!((p.cost - expected).abs() < 1e-9);
        assert_eq!(p.waypoints, vec![Cell::new(0, 0), Cell::new(4, 4)]);
        assert!((p.length(&g) - expected).abs() < 1e-9);
    }

    #[test]
    fn enclosed_goal_is_unreachable() {
        let mut g = free_grid(5, 5);
        for c in [(1, 1), (2, 1), (3, 1), (1, 2), (3, 2), (1, 3), (2, 3), (3, 3)] {
            block(&mut g, Cell::new(c.0, c.1));
        }
        assert!(plan_path(&g, Cell::new(0, 0), Cell::new(2, 2)).is_none());
        assert!(plan_path(&g, Cell::new(0, 0), Cell::new(1, 1)).is_none(), "occupied goal");
    }

    #[test]
    fn no_corner_cutting() {
        let mut g = free_grid(2, 2);
        block(&mut g, Cell::new(1, 0));
        block(&mut g, Cell::new(0, 1));
        assert!(plan_path(&g, Cell::new(0, 0), Cell::new(1, 1)).is_none());
        assert!(!line_of_sight(&g, Cell::new(0, 0), Cell::new(1, 1)));
    }

    #[test]
    fn unknown_cells_cost_more() {
        let mut g = free_grid(5, 3);
        for x in 1..4 {
            g.set_log_odds(Cell::new(x, 1), 0.0);
        }
        let p = plan_path(&g, Cell::new(0, 1), Cell::new(4, 1)).unwrap();
        // detour through the free rows beats crossing three unknown cells
        assert!(p.raw.iter().all(|c| g.class(*c) != CellClass::Unknown));
    }

    #[test]
    fn wall_forces_detour() {
        let mut g = free_grid(7, 7);
        for y in 0..6 {
            block(&mut g, Cell::new(3, y));
        }
        let p = plan_path(&g, Cell::new(0, 0), Cell::new(6, 0)).unwrap();
        assert!(p.cost > 3.0);
        for w in p.waypoints.windows(2) {
            assert!(line_of_sight(&g, w[0], w[1]));
        }
    }

    proptest! {
        #[test]
        fn astar_matches_relaxation_oracle(
            w in 2usize..12, h in 2usize..12,
            mask in prop::collection::vec(0u8..10, 144),
            sx in 0usize..12, sy in 0usize..12, gx in 0usize..12, gy in 0usize..12,
        ) {
            let mut g = free_grid(w, h);
            for (i, m) in mask.iter().take(w * h).enumerate() {
                let c = g.cell_of(i);
                if *m == 0 { block(&mut g, c); } else if *m == 1 { g.set_log_odds(c, 0.0); }
            }
            let s = Cell::new(sx % w, sy % h);
            let t = Cell::new(gx % w, gy % h);
            let oracle = oracle_costs(&g, s)[g.index(t)];
            let field = distance_field(&g, s)[g.index(t)];
            match plan_path(&g, s, t) {
                Some(p) => {
                    prop_assert!((p.cost - oracle).abs() < 1e-9, "astar {} oracle {}", p.cost, oracle);
                    prop_assert!((field - oracle).abs() < 1e-9);
                    prop_assert_eq!(p.raw.first(), Some(&s));
                    prop_assert_eq!(p.raw.last(), Some(&t));
                    for win in p.waypoints.windows(2) {
                        prop_assert!(line_of_sight(&g, win[0], win[1]));
                    }
                }
                None => {
                    prop_assert!(!oracle.is_finite() || g.class(s) == CellClass::Occupied);
                    prop_assert!(!field.is_finite() || g.class(t) == CellClass::Occupied);
                }
            }
        }
    }
}
