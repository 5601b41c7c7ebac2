//! Epistemic planning for heterogeneous multi-robot teams under
//! range-limited communication.
//!
//! The crate is split into the building blocks of the planner:
//!
//! * [`domain`] – robots, capabilities, tasks and statuses.
//! * [`gridworld`] – occupancy grids, frontiers, planning, control and dynamics.
//! * [`belief`] – belief / empathy particles and their propagation.
//! * [`coverage`] – weighted frontier partitioning and goal selection.
//! * [`epistemic`] – Kripke-style epistemic states and product updates.
//! * [`alloc`] – task allocation with gossip tasks, warm-started GA.
//! * [`sim`] – the deterministic simulation harness, baselines and metrics.

pub mod alloc;
pub mod belief;
pub mod coverage;
pub mod domain;
pub mod epistemic;
mod error;
pub mod geom;
pub mod gridworld;
pub mod sim;

pub use error::{Error, Result};
pub use geom::Vec2;
