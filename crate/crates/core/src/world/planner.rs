use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{NavAction, NavGraph, Path};
use crate::error::{Error, Result};

/// Relative slack when comparing route lengths, so geometrically equal routes tie.
const TIE_EPS: f64 = 1e-9;

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Geometric distance from every node to one goal (Dijkstra).
#[derive(Clone, Debug)]
pub struct DistanceTable {
    goal: usize,
    dist: Vec<f64>,
}

impl DistanceTable {
    /// Counts as one planner call against `g`.
    pub fn to_goal(g: &NavGraph, goal: usize) -> Self {
        g.count_planner_call();
        let mut dist = vec![f64::INFINITY; g.node_count()];
        dist[goal] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Entry(0.0, goal));
        while let Some(Entry(d, u)) = heap.pop() {
            if d > dist[u] {
                continue;
            }
            for &v in g.neighbors(u) {
                let nd = d + g.distance(u, v);
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Entry(nd, v));
                }
            }
        }
        Self { goal, dist }
    }

    pub fn goal(&self) -> usize {
        self.goal
    }

    pub fn distance(&self, node: usize) -> f64 {
        self.dist[node]
    }

    /// Neighbour on a shortest route to the goal; `None` at the goal.
    pub fn next_hop(&self, g: &NavGraph, node: usize) -> Option<usize> {
        if node == self.goal {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        for &n in g.neighbors(node) {
            let via = g.distance(node, n) + self.dist[n];
            best = match best {
                None => Some((via, n)),
                Some((b, bn)) => {
                    let slack = TIE_EPS * b.abs().max(1.0);
                    if via < b - slack || ((via - b).abs() <= slack && n < bn) {
                        Some((via, n))
                    } else {
                        Some((b, bn))
                    }
                }
            };
        }
        best.filter(|(d, _)| d.is_finite()).map(|(_, n)| n)
    }

    /// Teacher action from `node`: first edge of the shortest route, or stop at the goal.
    pub fn teacher(&self, g: &NavGraph, node: usize) -> Result<NavAction> {
        if node == self.goal {
            return Ok(NavAction::Stop);
        }
        let next = self
            .next_hop(g, node)
            .ok_or_else(|| Error::InvalidState(format!("goal {} unreachable from {node}", self.goal)))?;
        Ok(NavAction::Move(g.action_to(node, next).expect("neighbour")))
    }
}

/// First edge of the shortest path from `node` to `goal`; [`NavAction::Stop`] at the goal.
pub fn teacher_action(g: &NavGraph, node: usize, goal: usize) -> Result<NavAction> {
    g.check_node(node)?;
    g.check_node(goal)?;
    DistanceTable::to_goal(g, goal).teacher(g, node)
}

/// Replaces a path by the shortest path between its endpoints. Only valid in
/// seen environments; a closed walk has no such replacement.
pub fn shortest_path_transform(g: &NavGraph, p: &Path) -> Result<Path> {
    if !g.split().is_seen() {
        return Err(Error::PolicyViolation(format!(
            "shortest-path transform requested in {} world {}",
            g.split(),
            g.id()
        )));
    }
    if p.start() == p.end() {
        return Err(Error::DegeneratePath(p.start()));
    }
    g.shortest_path(p.start(), p.end())
}
