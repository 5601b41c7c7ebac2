//! Range-limited communication graph.

use std::collections::BTreeSet;

use crate::domain::{RobotId, RobotSpec};
use crate::geom::Vec2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectivityGraph {
    n: usize,
    /// Unordered pairs stored as (low, high).
    pub edges: BTreeSet<(RobotId, RobotId)>,
}

impl ConnectivityGraph {
    /// Edge iff the distance is within both robots' range.
    pub fn build(poses: &[Vec2], specs: &[RobotSpec]) -> Self {
        let radii: Vec<f64> = specs.iter().map(|s| s.comm_radius).collect();
        Self::with_radii(poses, &radii)
    }

    pub fn with_radii(poses: &[Vec2], radii: &[f64]) -> Self {
        let n = poses.len();
        let mut edges = BTreeSet::new();
        for i in 0..n {
            for j in i + 1..n {
                if poses[i].dist(poses[j]) <= radii[i].min(radii[j]) {
                    edges.insert((i, j));
                }
            }
        }
        ConnectivityGraph { n, edges }
    }

    pub fn connected(&self, a: RobotId, b: RobotId) -> bool {
        a == b || self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Components sorted by their smallest member.
    pub fn components(&self) -> Vec<BTreeSet<RobotId>> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut comps: Vec<BTreeSet<RobotId>> = Vec::new();
        let mut slot = vec![usize::MAX; self.n];
        for i in 0..self.n {
            let r = find(&mut parent, i);
            if slot[r] == usize::MAX {
                slot[r] = comps.len();
                comps.push(BTreeSet::new());
            }
            comps[slot[r]].insert(i);
        }
        comps
    }

    /// Component label per robot, indexing into [`Self::components`].
    pub fn labels(&self) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (k, c) in self.components().iter().enumerate() {
            for &i in c {
                out[i] = k;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(poses: &[(f64, f64)], r: f64) -> ConnectivityGraph {
        let p: Vec<Vec2> = poses.iter().map(|&(x, y)| Vec2::new(x, y)).collect();
        ConnectivityGraph::with_radii(&p, &vec![r; p.len()])
    }

    #[test]
    fn nine_meters_is_in_range() {
        assert!(g(&[(0.0, 0.0), (9.0, 0.0)], 10.0).connected(0, 1));
    }

    #[test]
    fn just_beyond_range_is_not() {
        assert!(!g(&[(0.0, 0.0), (10.01, 0.0)], 10.0).connected(0, 1));
    }

    #[test]
    fn chain_is_one_component() {
        let graph = g(&[(0.0, 0.0), (8.0, 0.0), (16.0, 0.0)], 10.0);
        assert!(!graph.connected(0, 2));
        assert_eq!(graph.components(), vec![BTreeSet::from([0, 1, 2])]);
    }

    #[test]
    fn range_is_the_smaller_radius() {
        let p = [Vec2::new(0.0, 0.0), Vec2::new(6.0, 0.0)];
        assert!(!ConnectivityGraph::with_radii(&p, &[10.0, 5.0]).connected(0, 1));
    }

    /// Reachability by repeated relaxation over the edge set.
    fn closure(graph: &ConnectivityGraph, n: usize, from: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([from]);
        loop {
            let before = seen.len();
            for &(a, b) in &graph.edges {
                if seen.contains(&a) || seen.contains(&b) {
                    seen.insert(a);
                    seen.insert(b);
                }
            }
            if seen.len() == before || seen.len() == n {
                return seen;
            }
        }
    }

    proptest! {
        #[test]
        fn components_match_reachability(pts in proptest::collection::vec((0.0..30.0f64, 0.0..30.0f64), 1..9)) {
            let graph = g(&pts, 8.0);
            let comps = graph.components();
            prop_assert_eq!(comps.iter().map(|c| c.len()).sum::<usize>(), pts.len());
            for c in &comps {
                let first = *c.iter().next().unwrap();
                prop_assert_eq!(&closure(&graph, pts.len(), first), c);
            }
            for &(a, b) in &graph.edges {
                prop_assert!(graph.connected(b, a));
            }
        }
    }
}
