//! Dynamic epistemic logic over robot statuses.
//!
//! An [`EpistemicState`] is a pointed Kripke structure: a set of worlds, one
//! accessibility relation per robot and a single designated (actual) world.
//! Updates never mutate a state; they build a new one and reduce it to a
//! canonical form (unreachable worlds dropped, bisimilar worlds merged,
//! worlds numbered by sorted signature) so two states are equal exactly when
//! they satisfy the same formulas.

mod formula;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{RobotId, Status, TaskId};
use crate::error::{Error, Result};

pub use formula::{Formula, Prop};

/// Valuation of one world: every robot's status, the belief rank at which
/// every robot is found, and the set of present tasks.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct World {
    pub statuses: Vec<Status>,
    pub tracks: Vec<usize>,
    pub present: BTreeSet<TaskId>,
}

impl World {
    pub fn new(statuses: Vec<Status>) -> Self {
        let n = statuses.len();
        World { statuses, tracks: vec![1; n], present: BTreeSet::new() }
    }

    fn satisfies(&self, p: &Prop) -> bool {
        match *p {
            Prop::Status(i, s) => self.statuses.get(i) == Some(&s),
            Prop::Track(j, b) => self.tracks.get(j) == Some(&b),
            Prop::Present(t) => self.present.contains(&t),
        }
    }
}

/// Announced content of a sync.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    /// Statuses of the announcing robots plus the tasks they know about.
    Dispositions { statuses: Vec<(RobotId, Status)>, present: BTreeSet<TaskId> },
    Formula(Formula),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionKind {
    Perceive(Formula),
    Announce(Payload),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub actor: RobotId,
    pub kind: ActionKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpistemicState {
    n_ranks: usize,
    worlds: Vec<World>,
    /// `succ[w][i]`: sorted R_i-successors of world `w`.
    succ: Vec<Vec<Vec<usize>>>,
    designated: usize,
}

impl EpistemicState {
    /// Single-world state everybody is certain of.
    pub fn certain(world: World, n_ranks: usize) -> Self {
        let n = world.statuses.len();
        EpistemicState { n_ranks, worlds: vec![world], succ: vec![vec![vec![0]; n]], designated: 0 }
    }

    /// Build from explicit parts. `access[i]` lists the R_i pairs.
    pub fn from_parts(worlds: Vec<World>, access: Vec<Vec<(usize, usize)>>, designated: usize, n_ranks: usize) -> Result<Self> {
        let n = access.len();
        if worlds.is_empty() || designated >= worlds.len() {
            return Err(Error::Contract("designated world out of range".into()));
        }
        if worlds.iter().any(|w| w.statuses.len() != n || w.tracks.len() != n) {
            return Err(Error::Contract("every world must value every robot".into()));
        }
        let mut succ = vec![vec![Vec::new(); n]; worlds.len()];
        for (i, pairs) in access.iter().enumerate() {
            for &(a, b) in pairs {
                if a >= worlds.len() || b >= worlds.len() {
                    return Err(Error::Contract(format!("relation {i} references missing world")));
                }
                succ[a][i].push(b);
            }
        }
        let raw = EpistemicState { n_ranks, worlds, succ, designated };
        if raw.reachable().len() != raw.worlds.len() {
            return Err(Error::Contract("world unreachable from the designated world".into()));
        }
        Ok(raw.canonical())
    }

    pub fn n_robots(&self) -> usize {
        self.worlds[0].statuses.len()
    }
    pub fn n_ranks(&self) -> usize {
        self.n_ranks
    }
    pub fn worlds(&self) -> &[World] {
        &self.worlds
    }
    pub fn designated(&self) -> usize {
        self.designated
    }
    pub fn designated_world(&self) -> &World {
        &self.worlds[self.designated]
    }
    pub fn successors(&self, world: usize, robot: RobotId) -> &[usize] {
        &self.succ[world][robot]
    }

    /// R_i as ordered world pairs.
    pub fn access(&self, robot: RobotId) -> Vec<(usize, usize)> {
        self.succ.iter().enumerate().flat_map(|(w, s)| s[robot].iter().map(move |&v| (w, v))).collect()
    }

    pub fn holds(&self, world: usize, f: &Formula) -> Result<bool> {
        if world >= self.worlds.len() {
            return Err(Error::Contract(format!("world {world} does not exist")));
        }
        Ok(self.eval(world, f))
    }

    fn eval(&self, w: usize, f: &Formula) -> bool {
        match f {
            Formula::Atom(p) => self.worlds[w].satisfies(p),
            Formula::Not(a) => !self.eval(w, a),
            Formula::And(a, b) => self.eval(w, a) && self.eval(w, b),
            Formula::Knows(i, a) | Formula::Believes(i, a) => {
                self.succ[w].get(*i).map_or(true, |s| s.iter().all(|&v| self.eval(v, a)))
            }
        }
    }

    /// Every robot considers exactly the actual world possible.
    pub fn true_world_certain(&self) -> bool {
        let d = self.designated;
        self.succ[d].iter().all(|s| s.as_slice() == [d])
    }

    pub fn product_update(&self, action: &Action) -> Result<Self> {
        match &action.kind {
            ActionKind::Announce(payload) => self.local_announce(&(0..self.n_robots()).collect(), payload),
            ActionKind::Perceive(phi) => self.perceive(action.actor, phi),
        }
    }

    /// Collapse the uncertainty of `members` only. With every robot as a
    /// member this is the global announce.
    pub fn local_announce(&self, members: &BTreeSet<RobotId>, payload: &Payload) -> Result<Self> {
        let n = self.n_robots();
        if members.iter().any(|&m| m >= n) {
            return Err(Error::Contract("announce member out of range".into()));
        }
        let d = self.designated;
        let mut next = self.clone();
        match payload {
            Payload::Dispositions { statuses, present } => {
                let mut w = self.worlds[d].clone();
                for &(r, s) in statuses {
                    if !members.contains(&r) {
                        return Err(Error::Contract(format!("robot {r} announced without being a member")));
                    }
                    w.statuses[r] = s;
                }
                for &m in members {
                    w.tracks[m] = 1;
                }
                w.present.extend(present.iter().copied());
                let id = next.push_world(w, self.succ[d].clone());
                for &m in members {
                    next.succ[id][m] = vec![id];
                }
                next.designated = id;
            }
            Payload::Formula(phi) => {
                if !self.eval(d, phi) {
                    return Err(Error::Contract("announced formula is false in the actual world".into()));
                }
                let id = next.push_world(self.worlds[d].clone(), self.succ[d].clone());
                for &m in members {
                    next.succ[id][m] = self.succ[d][m].iter().copied().filter(|&v| self.eval(v, phi)).collect();
                }
                next.designated = id;
                if members.len() == n {
                    // public announcement: drop refuting worlds everywhere
                    let keep: Vec<bool> = (0..next.worlds.len()).map(|v| next.eval(v, phi)).collect();
                    for s in &mut next.succ {
                        for r in s.iter_mut() {
                            r.retain(|&v| keep[v]);
                        }
                    }
                }
            }
        }
        Ok(next.canonical())
    }

    /// Robot `i` perceives `phi`. The actual world is revised to satisfy it,
    /// R_i from the actual world is refined, every other relation is left
    /// as it was.
    fn perceive(&self, i: RobotId, phi: &Formula) -> Result<Self> {
        let n = self.n_robots();
        if i >= n {
            return Err(Error::Contract(format!("robot {i} out of range")));
        }
        let d = self.designated;
        let actual = self.revise(&self.worlds[d], phi, i).into_iter().next().ok_or(Error::RevisionImpossible)?;

        let olds = &self.succ[d][i];
        let consistent: Vec<usize> = olds.iter().copied().filter(|&v| self.eval(v, phi)).collect();
        let adds_variants = matches!(phi, Formula::Atom(Prop::Present(_)));
        let mut new_vals: Vec<(World, usize)> = Vec::new();
        if !consistent.is_empty() && !adds_variants {
            new_vals.extend(consistent.iter().map(|&v| (self.worlds[v].clone(), v)));
        } else {
            for &v in olds {
                for w in self.revise(&self.worlds[v], phi, i) {
                    new_vals.push((w, v));
                }
            }
            if new_vals.is_empty() && !olds.is_empty() {
                return Err(Error::RevisionImpossible);
            }
        }

        let mut next = self.clone();
        let id = next.push_world(actual, self.succ[d].clone());
        let ids: Vec<usize> = new_vals.into_iter().map(|(w, src)| next.push_world(w, self.succ[src].clone())).collect();
        let mut set = ids.clone();
        set.sort_unstable();
        set.dedup();
        next.succ[id][i] = set.clone();
        for &v in &ids {
            next.succ[v][i] = set.clone();
        }
        next.designated = id;
        Ok(next.canonical())
    }

    /// Minimal revisions of `w` that satisfy `phi` from robot `i`'s point of
    /// view. Empty when no revision is known.
    fn revise(&self, w: &World, phi: &Formula, i: RobotId) -> Vec<World> {
        let mut out = w.clone();
        match phi {
            Formula::Atom(Prop::Present(t)) => {
                out.present.insert(*t);
                let mut busy = out.clone();
                busy.statuses[i] = Status::PerformingTask { task: *t };
                if busy == out {
                    vec![out]
                } else if self.eval_world(w, phi) {
                    vec![w.clone(), busy]
                } else {
                    vec![out, busy]
                }
            }
            _ if self.eval_world(w, phi) => vec![out],
            Formula::Atom(Prop::Status(r, s)) => {
                out.statuses[*r] = *s;
                vec![out]
            }
            Formula::Atom(Prop::Track(j, b)) if *b >= 1 && *b <= self.n_ranks => {
                out.tracks[*j] = *b;
                vec![out]
            }
            Formula::Not(inner) => match inner.as_ref() {
                Formula::Atom(Prop::Track(j, b)) if *b < self.n_ranks => {
                    out.tracks[*j] = b + 1;
                    vec![out]
                }
                Formula::Atom(Prop::Present(t)) => {
                    out.present.remove(t);
                    vec![out]
                }
                _ => vec![],
            },
            Formula::And(a, b) => self
                .revise(w, a, i)
                .into_iter()
                .flat_map(|v| self.revise(&v, b, i))
                .filter(|v| self.eval_world(v, phi))
                .collect(),
            _ => vec![],
        }
    }

    /// Evaluate a modality-free formula on a bare valuation.
    fn eval_world(&self, w: &World, f: &Formula) -> bool {
        match f {
            Formula::Atom(p) => w.satisfies(p),
            Formula::Not(a) => !self.eval_world(w, a),
            Formula::And(a, b) => self.eval_world(w, a) && self.eval_world(w, b),
            Formula::Knows(..) | Formula::Believes(..) => false,
        }
    }

    fn push_world(&mut self, w: World, succ: Vec<Vec<usize>>) -> usize {
        self.worlds.push(w);
        self.succ.push(succ);
        self.worlds.len() - 1
    }

    fn reachable(&self) -> Vec<usize> {
        let mut seen = vec![false; self.worlds.len()];
        let mut order = Vec::new();
        let mut queue = VecDeque::from([self.designated]);
        seen[self.designated] = true;
        while let Some(w) = queue.pop_front() {
            order.push(w);
            for s in &self.succ[w] {
                for &v in s {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        order
    }

    /// Drop unreachable worlds, merge bisimilar ones, renumber canonically.
    fn canonical(&self) -> Self {
        let keep = self.reachable();
        let n = self.n_robots();
        let mut remap = vec![usize::MAX; self.worlds.len()];
        for (k, &w) in keep.iter().enumerate() {
            remap[w] = k;
        }
        let worlds: Vec<&World> = keep.iter().map(|&w| &self.worlds[w]).collect();
        let succ: Vec<Vec<Vec<usize>>> = keep.iter().map(|&w| self.succ[w].iter().map(|s| s.iter().map(|&v| remap[v]).collect()).collect()).collect();

        let (mut block, mut count) = ranks(&worlds.iter().map(|w| (*w).clone()).collect::<Vec<_>>());
        loop {
            let sigs: Vec<(usize, Vec<Vec<usize>>)> = (0..worlds.len())
                .map(|w| {
                    let per: Vec<Vec<usize>> = succ[w]
                        .iter()
                        .map(|s| s.iter().map(|&v| block[v]).collect::<BTreeSet<_>>().into_iter().collect())
                        .collect();
                    (block[w], per)
                })
                .collect();
            let (next, next_count) = ranks(&sigs);
            // ranks sort by the old block first, so a stable count means a
            // stable partition
            let done = next_count == count;
            block = next;
            count = next_count;
            if done {
                break;
            }
        }
        let mut out_worlds = vec![None; count];
        let mut out_succ = vec![vec![Vec::new(); n]; count];
        for w in 0..worlds.len() {
            if out_worlds[block[w]].is_none() {
                out_worlds[block[w]] = Some(worlds[w].clone());
                out_succ[block[w]] = succ[w]
                    .iter()
                    .map(|s| s.iter().map(|&v| block[v]).collect::<BTreeSet<_>>().into_iter().collect())
                    .collect();
            }
        }
        EpistemicState {
            n_ranks: self.n_ranks,
            worlds: out_worlds.into_iter().map(|w| w.expect("every block has a member")).collect(),
            succ: out_succ,
            designated: block[remap[self.designated]],
        }
    }

    /// Graphviz rendering for inspection.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph epistemic {\n");
        for (k, w) in self.worlds.iter().enumerate() {
            let label: Vec<String> = w.statuses.iter().zip(&w.tracks).enumerate().map(|(i, (st, b))| format!("{i}:{st}@{b}")).collect();
            let shape = if k == self.designated { "doublecircle" } else { "circle" };
            let _ = writeln!(s, "  w{k} [shape={shape}, label=\"w{k}\\n{}\\n{:?}\"];", label.join("\\n"), w.present);
        }
        for (k, per) in self.succ.iter().enumerate() {
            for (i, targets) in per.iter().enumerate() {
                for t in targets {
                    let _ = writeln!(s, "  w{k} -> w{t} [label=\"R{i}\"];");
                }
            }
        }
        s.push_str("}\n");
        s
    }
}

/// Dense rank of every key in sorted order, plus the number of distinct keys.
fn ranks<K: Ord>(keys: &[K]) -> (Vec<usize>, usize) {
    let index: BTreeMap<&K, usize> = keys.iter().collect::<BTreeSet<_>>().into_iter().enumerate().map(|(k, v)| (v, k)).collect();
    (keys.iter().map(|k| index[k]).collect(), index.len())
}
