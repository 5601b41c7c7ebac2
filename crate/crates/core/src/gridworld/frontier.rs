use std::collections::BTreeSet;

use super::{CellClass, OccupancyGrid};

/// Indices of Free cells bordering at least one Unknown 4-neighbour.
pub type FrontierSet = BTreeSet<usize>;

pub fn extract_frontiers(grid: &OccupancyGrid) -> FrontierSet {
    (0..grid.len())
        .filter(|&i| grid.class_at(i) == CellClass::Free)
        .filter(|&i| grid.neighbors4(grid.cell_of(i)).any(|n| grid.class(n) == CellClass::Unknown))
        .collect()
}
