//! Frontier partitioning, goal selection and meeting points.

use crate::geom::{mean, Vec2};
use crate::gridworld::{distance_field, Cell, CellClass, FrontierSet, OccupancyGrid};

/// Penalty added to frontiers outside a robot's own region.
pub const OUT_OF_REGION_PENALTY: f64 = 100.0;

/// Assign every frontier cell to the robot minimising `weight * distance`.
/// Ties go to the lower robot id.
pub fn partition_frontiers(grid: &OccupancyGrid, frontiers: &FrontierSet, positions: &[Vec2], weights: &[f64]) -> Vec<FrontierSet> {
    assert_eq!(positions.len(), weights.len());
    let mut regions = vec![FrontierSet::new(); positions.len()];
    if positions.is_empty() {
        return regions;
    }
    for &f in frontiers {
        let c = grid.center(grid.cell_of(f));
        let mut best = 0;
        let mut best_v = f64::INFINITY;
        for (j, (&p, &w)) in positions.iter().zip(weights).enumerate() {
            let v = w * c.dist(p);
            if v < best_v {
                best_v = v;
                best = j;
            }
        }
        regions[best].insert(f);
    }
    regions
}

/// Expected travel time to `frontier`, plus the penalty when the cell is
/// outside the robot's region. With a distance field the planner distance is
/// used (infinite when unreachable), otherwise straight-line distance.
pub fn frontier_utility(grid: &OccupancyGrid, pose: Vec2, frontier: usize, speed: f64, in_region: bool, field: Option<&[f64]>) -> f64 {
    let d = match field {
        Some(f) => f[frontier],
        None => grid.center(grid.cell_of(frontier)).dist(pose),
    };
    let t = d / speed;
    if in_region {
        t
    } else {
        t + OUT_OF_REGION_PENALTY
    }
}

/// Frontier minimising the utility, ties to the lower cell index. Frontiers
/// the planner cannot reach are skipped.
pub fn select_goal(grid: &OccupancyGrid, pose: Vec2, own_region: &FrontierSet, frontiers: &FrontierSet, speed: f64) -> Option<usize> {
    if frontiers.is_empty() {
        return None;
    }
    let field = distance_field(grid, grid.clamped_cell(pose));
    let mut best = None;
    let mut best_u = f64::INFINITY;
    for &f in frontiers {
        let u = frontier_utility(grid, pose, f, speed, own_region.contains(&f), Some(&field));
        if u < best_u {
            best_u = u;
            best = Some(f);
        }
    }
    best
}

/// Free cell nearest the mean of `positions` from which every position can be
/// reached. Falls back to the nearest Free cell if none connects everyone.
pub fn meeting_point(grid: &OccupancyGrid, positions: &[Vec2]) -> Option<Vec2> {
    let centre = mean(positions)?;
    let mut free: Vec<(f64, usize)> = (0..grid.len())
        .filter(|&i| grid.class_at(i) == CellClass::Free)
        .map(|i| (grid.center(grid.cell_of(i)).dist(centre), i))
        .collect();
    free.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let first = free.first()?.1;
    let targets: Vec<Cell> = positions.iter().map(|&p| grid.clamped_cell(p)).collect();
    for &(_, i) in free.iter().take(16) {
        let field = distance_field(grid, grid.cell_of(i));
        if targets.iter().all(|&c| field[grid.index(c)].is_finite()) {
            return Some(grid.center(grid.cell_of(i)));
        }
    }
    Some(grid.center(grid.cell_of(first)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::extract_frontiers;
    use proptest::prelude::*;

    fn half_known(w: usize, h: usize, known_cols: usize) -> OccupancyGrid {
        let mut g = OccupancyGrid::new(w, h, 1.0, Vec2::ZERO).unwrap();
        for c in g.cells().collect::<Vec<_>>() {
            if c.x < known_cols {
                g.set_log_odds(c, -5.0);
            }
        }
        g
    }

    #[test]
    fn partition_prefers_weighted_nearest() {
        let g = half_known(10, 10, 5);
        let fr = extract_frontiers(&g);
        let regions = partition_frontiers(&g, &fr, &[Vec2::new(4.5, 0.5), Vec2::new(4.5, 9.5)], &[1.0, 1.0]);
        assert!(regions[0].iter().all(|&f| g.cell_of(f).y <= 4));
        assert!(regions[1].iter().all(|&f| g.cell_of(f).y >= 5));
        // a slow robot (large weight) loses everything in a tie region
        let regions = partition_frontiers(&g, &fr, &[Vec2::new(4.5, 5.0), Vec2::new(4.5, 5.0)], &[2.0, 1.0]);
        assert!(regions[0].is_empty());
        assert_eq!(regions[1].len(), fr.len());
    }

    #[test]
    fn equal_cost_goes_to_lower_id() {
        let g = half_known(10, 10, 5);
        let fr = extract_frontiers(&g);
        let regions = partition_frontiers(&g, &fr, &[Vec2::new(2.0, 5.0), Vec2::new(2.0, 5.0)], &[1.0, 1.0]);
        assert_eq!(regions[0].len(), fr.len());
    }

    #[test]
    fn goal_is_nearest_in_region() {
        let g = half_known(10, 10, 5);
        let fr = extract_frontiers(&g);
        let pose = Vec2::new(1.5, 7.5);
        let goal = select_goal(&g, pose, &fr, &fr, 1.0).unwrap();
        assert_eq!(g.cell_of(goal), Cell::new(4, 7));
        // outside own region the penalty dominates
        let region: FrontierSet = fr.iter().copied().filter(|&f| g.cell_of(f).y == 0).collect();
        let goal = select_goal(&g, pose, &region, &fr, 1.0).unwrap();
        assert_eq!(g.cell_of(goal).y, 0);
    }

    #[test]
    fn no_frontier_no_goal() {
        let g = half_known(4, 4, 4);
        assert_eq!(select_goal(&g, Vec2::new(1.0, 1.0), &FrontierSet::new(), &extract_frontiers(&g), 1.0), None);
    }

    #[test]
    fn meeting_point_is_free_cell_near_mean() {
        let mut g = half_known(10, 10, 10);
        // occupy the exact mean cell
        g.set_log_odds(Cell::new(5, 5), 10.0);
        let m = meeting_point(&g, &[Vec2::new(1.5, 5.5), Vec2::new(9.5, 5.5)]).unwrap();
        let c = g.cell_at(m).unwrap();
        assert_eq!(g.class(c), CellClass::Free);
        assert!(m.dist(Vec2::new(5.5, 5.5)) <= 1.0 + 1e-9);
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_cover(known in 1usize..9, px in 0.0f64..10.0, py in 0.0f64..10.0, w in 0.5f64..2.0) {
            let g = half_known(10, 10, known);
            let fr = extract_frontiers(&g);
            let regions = partition_frontiers(&g, &fr, &[Vec2::new(px, py), Vec2::new(9.0 - px * 0.5, 9.0 - py), Vec2::new(5.0, 5.0)], &[w, 1.0, 1.5]);
            let total: usize = regions.iter().map(|r| r.len()).sum();
            prop_assert_eq!(total, fr.len());
            let mut union = FrontierSet::new();
            for r in &regions {
                union.extend(r.iter().copied());
            }
            prop_assert_eq!(union, fr);
        }
    }
}
