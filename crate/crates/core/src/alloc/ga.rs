//! Feasible-solution generation and the genetic algorithm.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::schedule::{decode_policy, fitness, Policy};
use super::{AllocProblem, Chromosome, Travel};
use crate::domain::{capability_satisfies, Capability, CapabilitySet, RobotId};
use crate::error::{Error, Result};

/// Probability threshold for assigning a task before the reachable set
/// covers the whole team.
pub const FEASIBLE_THRESHOLD: f64 = 0.5;

const GENERATION_ATTEMPTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population: usize,
    pub generations: usize,
    /// Per-bit flip probability; `None` means one over the chromosome length.
    pub mutation_rate: Option<f64>,
    pub crossover_rate: f64,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams { population: 50, generations: 100, mutation_rate: None, crossover_rate: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaResult {
    pub policy: Policy,
    pub chromosome: Chromosome,
    pub history: Vec<GenerationStats>,
}

impl GaResult {
    pub fn history_csv(&self) -> String {
        let mut s = String::from("generation,best,mean\n");
        for g in &self.history {
            s.push_str(&format!("{},{},{}\n", g.generation, g.best, g.mean));
        }
        s
    }
}

/// Random zero-violation chromosome built by growing the reachable set with
/// gossip until every discovered task can be staffed.
pub fn gen_feasible<R: Rng + ?Sized>(p: &AllocProblem, rng: &mut R) -> Result<Chromosome> {
    let all_caps: Vec<CapabilitySet> = p
        .robots
        .iter()
        .filter(|r| p.connected.contains(&r.id) || p.gossip_task_for(r.id).is_some())
        .map(|r| r.capability)
        .collect();
    for t in p.tasks.iter().filter(|t| !t.is_gossip()) {
        if !capability_satisfies(&all_caps, &t.required, p.n_kinds)? {
            return Err(Error::Unsatisfiable(format!("team cannot perform task {:?}", t.kind)));
        }
    }
    if p.connected.is_empty() && p.tasks.iter().any(|t| !t.is_gossip()) {
        return Err(Error::Unsatisfiable("no connected robot to plan with".into()));
    }
    for _ in 0..GENERATION_ATTEMPTS {
        if let Some(c) = try_generate(p, rng) {
            return Ok(c);
        }
    }
    Err(Error::Generation("could not fit a feasible plan into the epoch budget".into()))
}

fn try_generate<R: Rng + ?Sized>(p: &AllocProblem, rng: &mut R) -> Option<Chromosome> {
    let n = p.n_robots();
    let everyone: BTreeSet<RobotId> = (0..n).collect();
    let mut reach = p.connected.clone();
    let mut next_epoch = vec![0usize; n];
    let mut informed: Vec<i64> = (0..n).map(|r| if reach.contains(&r) { -1 } else { i64::MAX }).collect();
    let mut chrom = Chromosome::zeros(p);
    let mut pending: Vec<usize> = (0..p.n_tasks()).filter(|&t| !p.tasks[t].is_gossip()).collect();

    let place = |chrom: &mut Chromosome, next_epoch: &mut Vec<usize>, informed: &Vec<i64>, r: RobotId, t: usize| -> Option<usize> {
        let e = next_epoch[r].max((informed[r] + 1) as usize);
        if e >= p.n_epochs {
            return None;
        }
        chrom.set(p, r, e, t, true);
        next_epoch[r] = e + 1;
        Some(e)
    };

    while !pending.is_empty() {
        let mut staffed: BTreeSet<RobotId> = BTreeSet::new();
        let reach_caps: Vec<CapabilitySet> = reach.iter().map(|&r| p.robots[r].capability).collect();
        let mut still = Vec::new();
        for &t in &pending {
            let task = &p.tasks[t];
            let capable = capability_satisfies(&reach_caps, &task.required, p.n_kinds).unwrap_or(false);
            if capable && (reach == everyone || rng.random::<f64>() > FEASIBLE_THRESHOLD) {
                if let Some(team) = pick_team(p, &reach, &task.required, rng) {
                    for &r in &team {
                        place(&mut chrom, &mut next_epoch, &informed, r, t)?;
                        staffed.insert(r);
                    }
                    continue;
                }
            }
            still.push(t);
        }
        pending = still;
        if pending.is_empty() {
            break;
        }
        let idle: Vec<RobotId> = reach.iter().copied().filter(|r| !staffed.contains(r)).collect();
        let mut grew = false;
        for r in idle {
            let outside: Vec<RobotId> = everyone.difference(&reach).copied().filter(|&g| p.gossip_task_for(g).is_some()).collect();
            let Some(&g) = outside.choose(rng) else { break };
            let t = p.gossip_task_for(g)?;
            let e = place(&mut chrom, &mut next_epoch, &informed, r, t)?;
            informed[g] = e as i64;
            reach.insert(g);
            grew = true;
        }
        if !grew {
            let reach_caps: Vec<CapabilitySet> = reach.iter().map(|&r| p.robots[r].capability).collect();
            if pending.iter().any(|&t| !capability_satisfies(&reach_caps, &p.tasks[t].required, p.n_kinds).unwrap_or(false)) {
                return None;
            }
        }
    }
    Some(chrom)
}

/// Uniformly chosen robots from `pool` covering every required capability;
/// a robot with several capabilities may fill several slots.
fn pick_team<R: Rng + ?Sized>(p: &AllocProblem, pool: &BTreeSet<RobotId>, required: &[u32], rng: &mut R) -> Option<BTreeSet<RobotId>> {
    let mut team: BTreeSet<RobotId> = BTreeSet::new();
    for (k, &need) in required.iter().enumerate() {
        let kind = Capability(k as u8);
        let have = team.iter().filter(|&&r| p.robots[r].capability.contains(kind)).count() as u32;
        let mut cands: Vec<RobotId> = pool.iter().copied().filter(|r| !team.contains(r) && p.robots[*r].capability.contains(kind)).collect();
        for _ in have..need {
            if cands.is_empty() {
                return None;
            }
            let i = rng.random_range(0..cands.len());
            team.insert(cands.swap_remove(i));
        }
    }
    if team.is_empty() {
        // tasks without requirements still need someone
        team.insert(*pool.iter().collect::<Vec<_>>().choose(rng)?.to_owned());
    }
    Some(team)
}

fn roulette<R: Rng + ?Sized>(scores: &[f64], rng: &mut R) -> usize {
    let worst = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let eps = 1e-6 * (1.0 + worst.abs());
    let weights: Vec<f64> = scores.iter().map(|&f| worst - f + eps).collect();
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    scores.len() - 1
}

/// Warm-started GA with roulette selection, one-point crossover, point
/// mutation and single-elite survival.
pub fn ga_solve<R: Rng + ?Sized>(p: &AllocProblem, params: &GaParams, travel: &dyn Travel, rng: &mut R) -> Result<GaResult> {
    ga_solve_threaded(p, params, travel, rng, 1)
}

/// [`ga_solve`] with each generation's fitness evaluations spread over up to
/// `threads` workers. Results are identical for every thread count.
pub fn ga_solve_threaded<R: Rng + ?Sized>(
    p: &AllocProblem,
    params: &GaParams,
    travel: &dyn Travel,
    rng: &mut R,
    threads: usize,
) -> Result<GaResult> {
    if params.population < 2 || params.crossover_rate < 0.0 || params.mutation_rate.is_some_and(|m| m < 0.0) {
        return Err(Error::Contract("GA parameters out of range".into()));
    }
    let len = p.chromosome_len();
    if len == 0 {
        let chromosome = Chromosome::zeros(p);
        let policy = decode_policy(&chromosome, p, travel)?;
        return Ok(GaResult { policy, chromosome, history: Vec::new() });
    }
    let mutation = params.mutation_rate.unwrap_or(1.0 / len as f64);
    let mut pop: Vec<Chromosome> = (0..params.population).map(|_| gen_feasible(p, rng)).collect::<Result<_>>()?;
    let mut scores = evaluate(&pop, p, travel, threads);
    let mut history = Vec::with_capacity(params.generations + 1);
    let stats = |g: usize, s: &[f64]| GenerationStats {
        generation: g,
        best: s.iter().copied().fold(f64::INFINITY, f64::min),
        mean: s.iter().sum::<f64>() / s.len() as f64,
    };
    history.push(stats(0, &scores));
    for g in 1..=params.generations {
        let elite = argmin(&scores);
        let mut children = Vec::with_capacity(params.population);
        while children.len() + 1 < params.population {
            let a = &pop[roulette(&scores, rng)];
            let b = &pop[roulette(&scores, rng)];
            let (mut c1, mut c2) = (a.clone(), b.clone());
            if rng.random::<f64>() < params.crossover_rate && len > 1 {
                let cut = rng.random_range(1..len);
                c1.bits[cut..].copy_from_slice(&b.bits[cut..]);
                c2.bits[cut..].copy_from_slice(&a.bits[cut..]);
            }
            for c in [&mut c1, &mut c2] {
                for bit in c.bits.iter_mut() {
                    if rng.random::<f64>() < mutation {
                        *bit = !*bit;
                    }
                }
            }
            children.push(c1);
            if children.len() + 1 < params.population {
                children.push(c2);
            }
        }
        let child_scores = evaluate(&children, p, travel, threads);
        let mut next = vec![pop[elite].clone()];
        let mut next_scores = vec![scores[elite]];
        next.extend(children);
        next_scores.extend(child_scores);
        pop = next;
        scores = next_scores;
        history.push(stats(g, &scores));
    }
    let best = argmin(&scores);
    let chromosome = pop[best].clone();
    let policy = decode_policy(&chromosome, p, travel)?;
    if !policy.is_feasible() {
        return Err(Error::NoFeasibleSolution);
    }
    Ok(GaResult { policy, chromosome, history })
}

fn evaluate(pop: &[Chromosome], p: &AllocProblem, travel: &dyn Travel, threads: usize) -> Vec<f64> {
    let threads = threads.clamp(1, pop.len().max(1));
    if threads == 1 {
        return pop.iter().map(|c| fitness(c, p, travel)).collect();
    }
    let chunk = pop.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = pop
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(|c| fitness(c, p, travel)).collect::<Vec<f64>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("fitness worker")).collect()
    })
}

fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s < scores[best] {
            best = i;
        }
    }
    best
}
