//! Occupancy-grid environment: log-odds maps, sensing, frontiers, planning,
//! potential-field control and robot dynamics.

mod dynamics;
mod export;
mod frontier;
mod planner;
mod sensor;

pub use dynamics::{apf_step, step_dynamics, ApfGains, KinematicState, StepOutcome};
pub use export::{parse_ascii, to_ascii, to_pgm};
pub use frontier::{extract_frontiers, FrontierSet};
pub use planner::{distance_field, line_of_sight, plan_path, string_pull, PlannedPath, UNKNOWN_COST_FACTOR};
pub use sensor::sense_disk;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Integer cell coordinate; `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Cell { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellClass {
    Unknown,
    Free,
    Occupied,
}

/// Inverse sensor model and classification thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogOddsParams {
    pub p_hit: f64,
    pub p_miss: f64,
    pub l_max: f64,
    pub free_threshold: f64,
    pub occupied_threshold: f64,
}

impl Default for LogOddsParams {
    fn default() -> Self {
        LogOddsParams { p_hit: 0.7, p_miss: 0.3, l_max: 10.0, free_threshold: -0.5, occupied_threshold: 0.5 }
    }
}

impl LogOddsParams {
    pub fn hit_increment(&self) -> f64 {
        (self.p_hit / (1.0 - self.p_hit)).ln()
    }

    pub fn miss_increment(&self) -> f64 {
        (self.p_miss / (1.0 - self.p_miss)).ln()
    }

    pub fn classify(&self, l: f64) -> CellClass {
        if l < self.free_threshold {
            CellClass::Free
        } else if l > self.occupied_threshold {
            CellClass::Occupied
        } else {
            CellClass::Unknown
        }
    }
}

/// One sensor observation of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Reading {
    pub cell: Cell,
    pub hit: bool,
}

/// Row-major log-odds occupancy grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Vec2,
    cells: Vec<f64>,
    params: LogOddsParams,
    version: u64,
}

impl OccupancyGrid {
    /// All-unknown grid (log-odds 0 everywhere).
    pub fn new(width: usize, height: usize, resolution: f64, origin: Vec2) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Contract("grid must have at least one cell".into()));
        }
        if !(resolution > 0.0) {
            return Err(Error::Contract("resolution must be positive".into()));
        }
        Ok(OccupancyGrid {
            width,
            height,
            resolution,
            origin,
            cells: vec![0.0; width * height],
            params: LogOddsParams::default(),
            version: 0,
        })
    }

    pub fn with_params(mut self, params: LogOddsParams) -> Self {
        self.params = params;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn resolution(&self) -> f64 {
        self.resolution
    }
    pub fn origin(&self) -> Vec2 {
        self.origin
    }
    pub fn params(&self) -> &LogOddsParams {
        &self.params
    }
    pub fn len(&self) -> usize {
        self.cells.len()
    }
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
    /// Incremented on every mutation.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// World-space extent `(min, max)`.
    pub fn bounds(&self) -> (Vec2, Vec2) {
        let max = self.origin + Vec2::new(self.width as f64 * self.resolution, self.height as f64 * self.resolution);
        (self.origin, max)
    }

    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell_of(&self, idx: usize) -> Cell {
        Cell::new(idx % self.width, idx / self.width)
    }

    pub fn in_bounds(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height
    }

    /// Cell containing `p`, or `None` outside the workspace.
    pub fn cell_at(&self, p: Vec2) -> Option<Cell> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some(Cell::new(fx as usize, fy as usize))
    }

    /// Cell containing `p`, clamping points outside the grid onto its border.
    pub fn clamped_cell(&self, p: Vec2) -> Cell {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        Cell::new(
            fx.clamp(0.0, (self.width - 1) as f64) as usize,
            fy.clamp(0.0, (self.height - 1) as f64) as usize,
        )
    }

    pub fn center(&self, c: Cell) -> Vec2 {
        self.origin + Vec2::new((c.x as f64 + 0.5) * self.resolution, (c.y as f64 + 0.5) * self.resolution)
    }

    /// Clamp a point into the workspace rectangle.
    pub fn clamp_point(&self, p: Vec2) -> Vec2 {
        let (lo, hi) = self.bounds();
        let eps = 1e-9;
        Vec2::new(p.x.clamp(lo.x, hi.x - eps), p.y.clamp(lo.y, hi.y - eps))
    }

    pub fn log_odds(&self, c: Cell) -> f64 {
        self.cells[self.index(c)]
    }

    pub fn log_odds_at(&self, idx: usize) -> f64 {
        self.cells[idx]
    }

    pub fn set_log_odds(&mut self, c: Cell, l: f64) {
        let idx = self.index(c);
        self.cells[idx] = l.clamp(-self.params.l_max, self.params.l_max);
        self.version += 1;
    }

    pub fn class(&self, c: Cell) -> CellClass {
        self.params.classify(self.log_odds(c))
    }

    pub fn class_at(&self, idx: usize) -> CellClass {
        self.params.classify(self.cells[idx])
    }

    pub fn is_occupied_at(&self, idx: usize) -> bool {
        self.cells[idx] > self.params.occupied_threshold
    }

    /// True when `p` lies outside the grid or in an Occupied cell.
    pub fn blocked(&self, p: Vec2) -> bool {
        match self.cell_at(p) {
            Some(c) => self.class(c) == CellClass::Occupied,
            None => true,
        }
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (0..self.cells.len()).map(move |i| self.cell_of(i))
    }

    pub fn count(&self, class: CellClass) -> usize {
        self.cells.iter().filter(|&&l| self.params.classify(l) == class).count()
    }

    /// 4-neighbourhood.
    pub fn neighbors4(&self, c: Cell) -> impl Iterator<Item = Cell> + '_ {
        const D: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        D.iter().filter_map(move |&(dx, dy)| {
            let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
            self.in_bounds(x, y).then(|| Cell::new(x as usize, y as usize))
        })
    }

    /// Recursive Bayesian update: add the hit/miss log-odds increment to
    /// every read cell, clamped to ±`l_max`. Unread cells are untouched.
    pub fn update(&mut self, readings: &[Reading]) -> Result<()> {
        if let Some(bad) = readings.iter().find(|r| r.cell.x >= self.width || r.cell.y >= self.height) {
            return Err(Error::Contract(format!("reading at {:?} lies outside the grid", bad.cell)));
        }
        if readings.is_empty() {
            return Ok(());
        }
        let (hit, miss, l_max) = (self.params.hit_increment(), self.params.miss_increment(), self.params.l_max);
        for r in readings {
            let idx = self.index(r.cell);
            let inc = if r.hit { hit } else { miss };
            self.cells[idx] = (self.cells[idx] + inc).clamp(-l_max, l_max);
        }
        self.version += 1;
        Ok(())
    }

    /// Fold another grid's log-odds deltas (relative to `base`) into this one.
    /// Adding the same delta set twice counts it twice; callers track what
    /// they have already merged.
    pub fn merge_delta(&mut self, other: &OccupancyGrid, base: &OccupancyGrid) -> Result<()> {
        self.check_same_shape(other)?;
        self.check_same_shape(base)?;
        let l_max = self.params.l_max;
        let mut changed = false;
        for i in 0..self.cells.len() {
            let d = other.cells[i] - base.cells[i];
            if d != 0.0 {
                self.cells[i] = (self.cells[i] + d).clamp(-l_max, l_max);
                changed = true;
            }
        }
        if changed {
            self.version += 1;
        }
        Ok(())
    }

    /// Cell-wise union of knowledge: keeps, per cell, the more confident of
    /// the two log-odds values. Commutative and idempotent.
    pub fn merge_max_confidence(&mut self, other: &OccupancyGrid) -> Result<()> {
        self.check_same_shape(other)?;
        let mut changed = false;
        for (a, &b) in self.cells.iter_mut().zip(&other.cells) {
            let pick = if b.abs() > a.abs() || (b.abs() == a.abs() && b > *a) { b } else { *a };
            if pick != *a {
                *a = pick;
                changed = true;
            }
        }
        if changed {
            self.version += 1;
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &OccupancyGrid) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Contract("grids differ in shape".into()));
        }
        Ok(())
    }
}

/// Functional form of [`OccupancyGrid::update`]; `pose` is the sensor origin
/// and only documents where the readings came from.
pub fn bayes_update(grid: &OccupancyGrid, _pose: Vec2, readings: &[Reading]) -> Result<OccupancyGrid> {
    let mut g = grid.clone();
    g.update(readings)?;
    Ok(g)
}
