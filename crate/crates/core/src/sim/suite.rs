//! Batches of runs and their summary table.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::engine::RunOptions;
use super::generate::with_faults;
use super::metrics::RunMetrics;
use super::scenario::{Method, Scenario};
use super::run_scenario;
use crate::error::Result;

/// Cap on a non-ideal run, as a multiple of the ideal run's mission time.
pub const IDEAL_CAP_FACTOR: f64 = 10.0;

/// Worker count from `EPISIM_THREADS`, defaulting to the available cores.
pub fn threads_from_env() -> usize {
    std::env::var("EPISIM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Run `jobs` on up to `threads` workers; results come back in job order.
fn parallel_map<T: Sync, R: Send>(jobs: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads.clamp(1, jobs.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= jobs.len() {
                    break;
                }
                let r = f(&jobs[k]);
                out.lock().expect("result slots")[k] = Some(r);
            });
        }
    });
    out.into_inner().expect("result slots").into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Every environment × seed offset × fault count × method. Ideal runs go
/// first and set the time cap of the other two methods on the same instance.
pub fn run_suite(envs: &[Scenario], seed_offsets: &[u64], faults: &[usize], threads: usize) -> Result<Vec<RunMetrics>> {
    let mut instances = Vec::new();
    for env in envs {
        for &off in seed_offsets {
            let seed = env.seed.wrapping_add(off);
            for &k in faults {
                let mut sc = env.clone();
                sc.seed = seed;
                instances.push(with_faults(&sc, k, seed)?);
            }
        }
    }
    let opts = RunOptions { threads: 1, time_cap: None, record_poses: false };
    let ideal = parallel_map(&instances, threads, |sc| {
        let mut sc = sc.clone();
        sc.method = Method::Ideal;
        run_scenario(&sc, &opts)
    });
    let mut jobs = Vec::new();
    for (k, sc) in instances.iter().enumerate() {
        let m = ideal[k].as_ref().map_err(Clone::clone)?;
        let cap = if m.completed { m.mission_time * IDEAL_CAP_FACTOR } else { sc.time_cap };
        for method in [Method::Proposed, Method::Flock] {
            let mut sc = sc.clone();
            sc.method = method;
            jobs.push((sc, cap));
        }
    }
    let rest = parallel_map(&jobs, threads, |(sc, cap)| run_scenario(sc, &RunOptions { time_cap: Some(*cap), ..opts }));
    let mut out = Vec::with_capacity(instances.len() * 3);
    let mut rest = rest.into_iter();
    for m in ideal {
        out.push(m?);
        out.push(rest.next().expect("proposed run")?);
        out.push(rest.next().expect("flock run")?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub faults: usize,
    pub runs: usize,
    pub completed: usize,
    /// Incomplete runs count at their cap.
    pub mean_time: f64,
    pub sd_time: f64,
    pub mean_coverage_auc: f64,
    pub mean_messages: f64,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "method,faults,runs,completed,mean_mission_time,sd_mission_time,mean_coverage_auc,mean_messages";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.3},{:.3},{:.4},{:.1}",
            self.method.name(),
            self.faults,
            self.runs,
            self.completed,
            self.mean_time,
            self.sd_time,
            self.mean_coverage_auc,
            self.mean_messages
        )
    }
}

pub fn summarize(runs: &[RunMetrics]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(Method, usize), Vec<&RunMetrics>> = BTreeMap::new();
    for r in runs {
        groups.entry((r.method, r.faults)).or_default().push(r);
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((method, faults), rs)| {
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&RunMetrics) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let mean_time = mean(&|r| r.mission_time);
            let var = rs.iter().map(|r| (r.mission_time - mean_time).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
            SummaryRow {
                method,
                faults,
                runs: rs.len(),
                completed: rs.iter().filter(|r| r.completed).count(),
                mean_time,
                sd_time: var.sqrt(),
                mean_coverage_auc: mean(&|r| r.coverage_auc),
                mean_messages: mean(&|r| r.messages as f64),
            }
        })
        .collect();
    rows.sort_by_key(|r| (Method::ALL.iter().position(|&m| m == r.method), r.faults));
    rows
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = format!("{}\n", SummaryRow::CSV_HEADER);
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn runs_csv(runs: &[RunMetrics]) -> String {
    let mut s = format!("{}\n", RunMetrics::CSV_HEADER);
    for r in runs {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let jobs: Vec<u64> = (0..37).collect();
        assert_eq!(parallel_map(&jobs, 4, |&x| x * x), jobs.iter().map(|x| x * x).collect::<Vec<_>>());
        assert!(parallel_map(&Vec::<u64>::new(), 4, |&x| x).is_empty());
    }

    #[test]
    fn summary_groups_and_averages() {
        let sc = super::super::scenario::tests::tiny();
        let m = run_scenario(&sc, &RunOptions::default()).unwrap();
        let mut a = m.clone();
        a.mission_time = 10.0;
        let mut b = m.clone();
        b.mission_time = 20.0;
        let mut c = m;
        c.method = Method::Ideal;
        let rows = summarize(&[a, b, c]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, Method::Ideal);
        assert_eq!(rows[1].runs, 2);
        assert!((rows[1].mean_time - 15.0).abs() < 1e-12);
        assert!((rows[1].sd_time - 50f64.sqrt()).abs() < 1e-12);
    }
}
