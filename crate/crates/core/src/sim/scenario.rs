//! Scenario files.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::connectivity::ConnectivityGraph;
use crate::alloc::GaParams;
use crate::belief::{validate_speed_factors, DEFAULT_SPEED_FACTORS};
use crate::domain::{capability_satisfies, CapabilitySet, RobotSpec, Task, TaskPhase};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::gridworld::{Cell, OccupancyGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Proposed,
    Flock,
    Ideal,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ideal, Method::Proposed, Method::Flock];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Flock => "flock",
            Method::Ideal => "ideal",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "proposed" => Ok(Method::Proposed),
            "flock" => Ok(Method::Flock),
            "ideal" => Ok(Method::Ideal),
            _ => Err(Error::Scenario(format!("unknown method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRobot {
    #[serde(flatten)]
    pub spec: RobotSpec,
    pub start: Vec2,
}

/// From `time` on, `robot` can only keep up with its particle of rank `level`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub time: f64,
    pub robot: usize,
    pub level: usize,
}

fn default_ranks() -> usize {
    3
}
fn default_factors() -> Vec<f64> {
    DEFAULT_SPEED_FACTORS.to_vec()
}
fn default_tick() -> f64 {
    0.1
}
fn default_noise() -> f64 {
    0.02
}
fn default_kinds() -> usize {
    2
}
fn default_cap() -> f64 {
    600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    /// Workspace extent in meters; the origin is (0, 0).
    pub width: f64,
    pub height: f64,
    pub resolution: f64,
    pub robots: Vec<ScenarioRobot>,
    #[serde(default)]
    pub tasks: Vec<Task>,
    /// Obstacle cells every robot knows from the start.
    #[serde(default)]
    pub known_obstacles: Vec<Cell>,
    #[serde(default)]
    pub unknown_obstacles: Vec<Cell>,
    #[serde(default)]
    pub failures: Vec<Failure>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method: Method,
    #[serde(default = "default_ranks")]
    pub n_ranks: usize,
    #[serde(default = "default_factors")]
    pub speed_factors: Vec<f64>,
    #[serde(default = "default_tick")]
    pub tick: f64,
    #[serde(default = "default_kinds")]
    pub n_kinds: usize,
    /// Simulated seconds before a run is declared incomplete.
    #[serde(default = "default_cap")]
    pub time_cap: f64,
    /// Motion noise, m/√s per axis.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    #[serde(default)]
    pub ga: GaParams,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        ((self.width / self.resolution).round() as usize, (self.height / self.resolution).round() as usize)
    }

    pub fn specs(&self) -> Vec<RobotSpec> {
        self.robots.iter().map(|r| r.spec.clone()).collect()
    }

    pub fn starts(&self) -> Vec<Vec2> {
        self.robots.iter().map(|r| r.start).collect()
    }

    fn blank_grid(&self) -> Result<OccupancyGrid> {
        let (w, h) = self.grid_dims();
        OccupancyGrid::new(w, h, self.resolution, Vec2::ZERO)
    }

    /// Ground truth: every cell fully Free or fully Occupied.
    pub fn truth_grid(&self) -> Result<OccupancyGrid> {
        let mut g = self.blank_grid()?;
        let l = g.params().l_max;
        for c in g.cells().collect::<Vec<_>>() {
            g.set_log_odds(c, -l);
        }
        for &c in self.known_obstacles.iter().chain(&self.unknown_obstacles) {
            g.set_log_odds(c, l);
        }
        Ok(g)
    }

    /// Initial robot map: Unknown except the known obstacles.
    pub fn prior_grid(&self) -> Result<OccupancyGrid> {
        let mut g = self.blank_grid()?;
        let l = g.params().l_max;
        for &c in &self.known_obstacles {
            g.set_log_odds(c, l);
        }
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !(self.width > 0.0 && self.height > 0.0 && self.resolution > 0.0) {
            return bad("workspace and resolution must be positive".into());
        }
        if !(self.tick > 0.0) || !(self.time_cap > 0.0) || !(self.noise_std >= 0.0) {
            return bad("tick, time_cap and noise_std out of range".into());
        }
        if self.robots.is_empty() {
            return bad("no robots".into());
        }
        validate_speed_factors(&self.speed_factors, self.n_ranks).map_err(|e| Error::Scenario(e.to_string()))?;
        let (w, h) = self.grid_dims();
        for &c in self.known_obstacles.iter().chain(&self.unknown_obstacles) {
            if c.x >= w || c.y >= h {
                return bad(format!("obstacle cell ({}, {}) outside {w}x{h}", c.x, c.y));
            }
        }
        let truth = self.truth_grid()?;
        for (i, r) in self.robots.iter().enumerate() {
            if r.spec.id != i {
                return bad("robot ids must be 0..N in order".into());
            }
            r.spec.validate()?;
            if truth.cell_at(r.start).is_none() || truth.blocked(r.start) {
                return bad(format!("robot {i} starts outside free space"));
            }
        }
        let graph = ConnectivityGraph::build(&self.starts(), &self.specs());
        if graph.components().len() != 1 {
            return bad("robots must start within communication range of each other".into());
        }
        let caps: Vec<CapabilitySet> = self.robots.iter().map(|r| r.spec.capability).collect();
        let mut ids = BTreeSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            t.validate(self.n_kinds)?;
            if t.id != i || !ids.insert(t.id) {
                return bad("task ids must be 0..T in order".into());
            }
            if t.phase != TaskPhase::Undiscovered {
                return bad(format!("task {i} must start undiscovered"));
            }
            if truth.cell_at(t.position).is_none() {
                return bad(format!("task {i} outside the workspace"));
            }
            if !capability_satisfies(&caps, &t.required, self.n_kinds)? {
                return bad(format!("team cannot perform task {i}"));
            }
        }
        for f in &self.failures {
            if f.robot >= self.robots.len() {
                return bad(format!("failure names unknown robot {}", f.robot));
            }
            if f.level < 2 || f.level > self.n_ranks {
                return bad(format!("failure level {} outside 2..={}", f.level, self.n_ranks));
            }
            if !(f.time >= 0.0) {
                return bad("failure time must be non-negative".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::domain::Capability;

    pub(crate) fn tiny() -> Scenario {
        let spec = RobotSpec {
            id: 0,
            capability: CapabilitySet::single(Capability::GROUND),
            max_speed: 2.0,
            sense_radius: 3.0,
            comm_radius: 6.0,
            partition_weight: 0.5,
        };
        Scenario {
            name: "tiny".into(),
            width: 5.0,
            height: 5.0,
            resolution: 0.5,
            robots: vec![ScenarioRobot { spec, start: Vec2::new(1.25, 1.25) }],
            tasks: Vec::new(),
            known_obstacles: Vec::new(),
            unknown_obstacles: vec![Cell::new(5, 5)],
            failures: Vec::new(),
            seed: 1,
            method: Method::Proposed,
            n_ranks: 3,
            speed_factors: DEFAULT_SPEED_FACTORS.to_vec(),
            tick: 0.1,
            n_kinds: 2,
            time_cap: 100.0,
            noise_std: 0.0,
            ga: GaParams::default(),
        }
    }

    #[test]
    fn json_round_trip() {
        let s = tiny();
        let back = Scenario::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn defaults_fill_optional_fields() {
        let text = r#"{"width":4,"height":4,"resolution":0.5,
            "robots":[{"id":0,"capability":[0],"max_speed":1,"sense_radius":2,"comm_radius":5,"partition_weight":1,"start":{"x":1,"y":1}}]}"#;
        let s = Scenario::from_json(text).unwrap();
        assert_eq!(s.n_ranks, 3);
        assert_eq!(s.tick, 0.1);
        assert_eq!(s.method, Method::Proposed);
    }

    #[test]
    fn failure_level_beyond_ranks_is_rejected() {
        let mut s = tiny();
        s.failures.push(Failure { time: 1.0, robot: 0, level: 4 });
        assert!(matches!(s.validate(), Err(Error::Scenario(_))));
        s.failures[0].level = 1;
        assert!(s.validate().is_err());
        s.failures[0].level = 2;
        assert!(s.validate().is_ok());
    }

    #[test]
    fn distant_starts_are_rejected() {
        let mut s = tiny();
        s.width = 40.0;
        s.height = 40.0;
        let mut far = s.robots[0].clone();
        far.spec.id = 1;
        far.start = Vec2::new(30.0, 30.0);
        s.robots.push(far);
        assert!(s.validate().is_err());
    }

    #[test]
    fn truth_and_prior_grids() {
        let s = tiny();
        let truth = s.truth_grid().unwrap();
        assert!(truth.blocked(Vec2::new(2.75, 2.75)));
        assert!(!truth.blocked(Vec2::new(1.0, 1.0)));
        let prior = s.prior_grid().unwrap();
        assert_eq!(prior.count(crate::gridworld::CellClass::Unknown), 100);
    }
}
