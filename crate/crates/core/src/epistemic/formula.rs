use serde::{Deserialize, Serialize};

use crate::domain::{RobotId, Status, TaskId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Prop {
    /// Robot `i` has status `σ`.
    Status(RobotId, Status),
    /// Robot `j` is found at its rank-`b` particle.
    Track(RobotId, usize),
    Present(TaskId),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Formula {
    Atom(Prop),
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Knows(RobotId, Box<Formula>),
    Believes(RobotId, Box<Formula>),
}

impl Formula {
    pub fn status(i: RobotId, s: Status) -> Self {
        Formula::Atom(Prop::Status(i, s))
    }
    pub fn track(j: RobotId, b: usize) -> Self {
        Formula::Atom(Prop::Track(j, b))
    }
    pub fn present(t: TaskId) -> Self {
        Formula::Atom(Prop::Present(t))
    }
    pub fn not(self) -> Self {
        Formula::Not(Box::new(self))
    }
    pub fn and(self, other: Formula) -> Self {
        Formula::And(Box::new(self), Box::new(other))
    }
    pub fn or(self, other: Formula) -> Self {
        self.not().and(other.not()).not()
    }
    pub fn knows(i: RobotId, f: Formula) -> Self {
        Formula::Knows(i, Box::new(f))
    }
    pub fn believes(i: RobotId, f: Formula) -> Self {
        Formula::Believes(i, Box::new(f))
    }

    /// Whether robot `i` appears in an atom or as a modality.
    pub fn mentions(&self, i: RobotId) -> bool {
        match self {
            Formula::Atom(Prop::Status(r, _)) | Formula::Atom(Prop::Track(r, _)) => *r == i,
            Formula::Atom(Prop::Present(_)) => false,
            Formula::Not(a) => a.mentions(i),
            Formula::And(a, b) => a.mentions(i) || b.mentions(i),
            Formula::Knows(r, a) | Formula::Believes(r, a) => *r == i || a.mentions(i),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Formula::Atom(_) => 0,
            Formula::Not(a) => a.depth(),
            Formula::And(a, b) => a.depth().max(b.depth()),
            Formula::Knows(_, a) | Formula::Believes(_, a) => 1 + a.depth(),
        }
    }
}
