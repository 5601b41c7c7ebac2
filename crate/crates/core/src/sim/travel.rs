//! Planner-based travel estimates for allocation.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use crate::alloc::Travel;
use crate::geom::Vec2;
use crate::gridworld::{distance_field, OccupancyGrid};

/// Grid path costs from lazily computed, cached distance fields. A query is
/// answered from a field rooted at either endpoint, so costs are treated as
/// symmetric.
pub struct GridTravel {
    grid: OccupancyGrid,
    fields: Mutex<HashMap<usize, Arc<Vec<f64>>>>,
}

impl GridTravel {
    pub fn new(grid: OccupancyGrid) -> Self {
        GridTravel { grid, fields: Mutex::new(HashMap::new()) }
    }

    /// Compute the fields rooted at `points` up front.
    pub fn warm(&self, points: &[Vec2]) {
        for &p in points {
            let c = self.grid.index(self.grid.clamped_cell(p));
            self.field(c);
        }
    }

    fn field(&self, source: usize) -> Arc<Vec<f64>> {
        if let Some(f) = self.fields.lock().expect("travel cache").get(&source) {
            return f.clone();
        }
        let f = Arc::new(distance_field(&self.grid, self.grid.cell_of(source)));
        self.fields.lock().expect("travel cache").insert(source, f.clone());
        f
    }
}

impl Travel for GridTravel {
    fn distance(&self, from: Vec2, to: Vec2) -> f64 {
        let a = self.grid.index(self.grid.clamped_cell(from));
        let b = self.grid.index(self.grid.clamped_cell(to));
        if a == b {
            return from.dist(to);
        }
        let cached_b = self.fields.lock().expect("travel cache").get(&b).cloned();
        match cached_b {
            Some(f) => f[a],
            None => self.field(a)[b],
        }
    }
}
