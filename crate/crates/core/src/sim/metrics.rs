//! Per-run results.

use serde::{Deserialize, Serialize};

use super::scenario::Method;
use super::trace::Trace;

/// Distance between healthy robots and the rank-1 particle their peers hold
/// for them, sampled at every tick the two are out of contact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EmpathyStats {
    pub samples: u64,
    pub violations: u64,
    pub max_error: f64,
    /// Restricted to robots still executing the plan of the last full
    /// announce (no partial sync or private re-plan since).
    pub on_plan_samples: u64,
    pub on_plan_violations: u64,
    pub on_plan_max_error: f64,
}

impl EmpathyStats {
    pub(crate) fn sample(&mut self, error: f64, tolerance: f64, on_plan: bool) {
        self.samples += 1;
        self.max_error = self.max_error.max(error);
        if error > tolerance {
            self.violations += 1;
        }
        if on_plan {
            self.on_plan_samples += 1;
            self.on_plan_max_error = self.on_plan_max_error.max(error);
            if error > tolerance {
                self.on_plan_violations += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub scenario: String,
    pub method: Method,
    pub seed: u64,
    pub faults: usize,
    pub completed: bool,
    /// Time of completion, or the time cap for incomplete runs.
    pub mission_time: f64,
    /// Fraction of the free workspace known to at least one robot, once per
    /// simulated second.
    pub coverage: Vec<f64>,
    pub coverage_auc: f64,
    pub distance: Vec<f64>,
    pub messages: u64,
    pub tasks_completed: usize,
    pub n_tasks: usize,
    pub reallocations: usize,
    pub gossip_tasks: usize,
    pub empathy: EmpathyStats,
    /// Every full announce left the true world certain to everyone.
    pub certain_after_announce: bool,
    /// Largest number of connected components seen at any tick.
    pub max_components: usize,
    pub trace: Trace,
}

impl RunMetrics {
    pub const CSV_HEADER: &'static str = "scenario,method,seed,faults,completed,mission_time,coverage_auc,messages,tasks_completed";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{:.4},{},{}",
            self.scenario,
            self.method.name(),
            self.seed,
            self.faults,
            self.completed,
            self.mission_time,
            self.coverage_auc,
            self.messages,
            self.tasks_completed
        )
    }
}
