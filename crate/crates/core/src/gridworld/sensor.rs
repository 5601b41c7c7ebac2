use super::planner::ray_cells;
use super::{CellClass, OccupancyGrid, Reading};
use crate::geom::Vec2;

/// Disk range sensor with grid ray casting against the ground-truth map.
///
/// Every cell whose center lies within `radius` of `pose` and whose ray from
/// the sensor cell is not blocked earlier by an Occupied cell is read: a hit
/// if the cell itself is Occupied in `truth`, a miss otherwise.
pub fn sense_disk(truth: &OccupancyGrid, pose: Vec2, radius: f64) -> Vec<Reading> {
    let Some(origin) = truth.cell_at(pose) else {
        return Vec::new();
    };
    let res = truth.resolution();
    let span = (radius / res).ceil() as i64 + 1;
    let mut out = Vec::new();
    for dy in -span..=span {
        for dx in -span..=span {
            let (x, y) = (origin.x as i64 + dx, origin.y as i64 + dy);
            if !truth.in_bounds(x, y) {
                continue;
            }
            let target = super::Cell::new(x as usize, y as usize);
            if truth.center(target).dist(pose) > radius {
                continue;
            }
            let ray = ray_cells(origin, target);
            let blocked = ray[..ray.len() - 1].iter().any(|&c| truth.class(c) == CellClass::Occupied);
            if blocked {
                continue;
            }
            out.push(Reading { cell: target, hit: truth.class(target) == CellClass::Occupied });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::Cell;

    fn truth() -> OccupancyGrid {
        let mut g = OccupancyGrid::new(10, 10, 1.0, Vec2::ZERO).unwrap();
        for c in g.cells().collect::<Vec<_>>() {
            g.set_log_odds(c, -10.0);
        }
        for y in 0..10 {
            g.set_log_odds(Cell::new(5, y), 10.0);
        }
        g
    }

    #[test]
    fn wall_is_hit_and_shadows_beyond() {
        let t = truth();
        let r = sense_disk(&t, Vec2::new(3.5, 5.5), 4.0);
        assert!(r.iter().any(|r| r.cell == Cell::new(5, 5) && r.hit));
        assert!(r.iter().all(|r| r.cell.x <= 5));
        assert!(r.iter().any(|r| r.cell == Cell::new(3, 5) && !r.hit));
    }

    #[test]
    fn readings_stay_in_radius() {
        let t = truth();
        let pose = Vec2::new(1.5, 1.5);
        for r in sense_disk(&t, pose, 2.0) {
            assert!(t.center(r.cell).dist(pose) <= 2.0);
        }
    }
}
