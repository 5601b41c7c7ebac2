//! Scenario loading, the simulation loop and its outputs.

mod agent;
mod connectivity;
mod engine;
mod generate;
mod metrics;
mod replay;
mod scenario;
mod suite;
mod trace;
mod travel;

pub use connectivity::ConnectivityGraph;
pub use engine::RunOptions;
pub use generate::{gen_random_env, parse_team, with_faults, EnvParams, RobotKind};
pub use metrics::{EmpathyStats, RunMetrics};
pub use replay::{render, Render};
pub use scenario::{Failure, Method, Scenario, ScenarioRobot};
pub use suite::{run_suite, runs_csv, summarize, summary_csv, threads_from_env, SummaryRow, IDEAL_CAP_FACTOR};
pub use trace::{mm, Trace, TraceRecord};
pub use travel::GridTravel;

use crate::error::Result;

/// Simulate one scenario to completion or to its time cap.
pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunMetrics> {
    let cap = opts.time_cap.unwrap_or(sc.time_cap);
    engine::Engine::new(sc, opts)?.run(cap)
}
