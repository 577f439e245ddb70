//! Procedural navigation worlds: graphs, panoramic features, transitions,
//! shortest paths and the oracle instruction grammar.

mod grammar;
mod io;
mod planner;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use grammar::{
    oracle_instruction, path_turns, turn_class, Instruction, Provenance, Turn, Vocab, MAX_TOKENS,
    VOCAB_SIZE,
};
pub use io::{read_world, write_world};
pub use planner::{shortest_path_transform, teacher_action, DistanceTable};

use crate::error::{format_err, invalid_arg, Error, Result};
use crate::nn::Tensor;
use crate::seeding;

/// View patches per node.
pub const VIEW_PATCHES: usize = 6;
/// Width of one patch feature.
pub const FEATURE_DIM: usize = 32;
pub const COLORS: usize = 8;
pub const NOUNS: usize = 8;
const NOISE_DIMS: usize = 12;
const HEADING_OFFSET: usize = COLORS + NOUNS;
const NOISE_OFFSET: usize = HEADING_OFFSET + 4;
/// Patch feature plus the exact heading encoding of a candidate edge.
pub const ACTION_FEATURE_DIM: usize = FEATURE_DIM + 4;
pub const MIN_EDGE: f64 = 1.5;
pub const MAX_EDGE: f64 = 3.0;
pub const MIN_NODES: usize = 8;
/// Probability of adding a non-tree edge between two nodes in edge range.
const EXTRA_EDGE_PROB: f64 = 0.35;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    #[serde(rename = "train-seen")]
    TrainSeen,
    #[serde(rename = "val-unseen")]
    ValUnseen,
    #[serde(rename = "test-unseen")]
    TestUnseen,
}

impl Split {
    pub fn is_seen(self) -> bool {
        matches!(self, Split::TrainSeen)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::TrainSeen => "train-seen",
            Split::ValUnseen => "val-unseen",
            Split::TestUnseen => "test-unseen",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train-seen" => Ok(Split::TrainSeen),
            "val-unseen" => Ok(Split::ValUnseen),
            "test-unseen" => Ok(Split::TestUnseen),
            other => Err(format_err("split", other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Landmark {
    pub color: u8,
    pub noun: u8,
}

/// One move from a node: an index into its sorted neighbour list, or stop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NavAction {
    Move(usize),
    Stop,
}

/// Immutable navigation environment.
#[derive(Debug)]
pub struct NavGraph {
    id: String,
    seed: u64,
    split: Split,
    positions: Vec<[f64; 2]>,
    landmarks: Vec<Landmark>,
    neighbors: Vec<Vec<usize>>,
    style: [f64; NOISE_DIMS],
    planner_calls: AtomicU64,
}

impl Clone for NavGraph {
    fn clone(&self) -> Self {
        Self {
            id: self.id.clone(),
            seed: self.seed,
            split: self.split,
            positions: self.positions.clone(),
            landmarks: self.landmarks.clone(),
            neighbors: self.neighbors.clone(),
            style: self.style,
            planner_calls: AtomicU64::new(0),
        }
    }
}

impl PartialEq for NavGraph {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.seed == other.seed
            && self.split == other.split
            && self.positions == other.positions
            && self.landmarks == other.landmarks
            && self.neighbors == other.neighbors
    }
}

fn world_style(seed: u64) -> [f64; NOISE_DIMS] {
    let mut style = [0.0; NOISE_DIMS];
    for (k, s) in style.iter_mut().enumerate() {
        *s = seeding::unit(seeding::mix(seed ^ 0x5717_1E00, k as u64)) - 0.5;
    }
    style
}

impl NavGraph {
    /// Builds a graph from explicit parts. Edges must reference valid, distinct
    /// nodes; the result must be connected with degree at most [`VIEW_PATCHES`].
    pub fn from_parts(
        id: impl Into<String>,
        seed: u64,
        split: Split,
        positions: Vec<[f64; 2]>,
        landmarks: Vec<Landmark>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let n = positions.len();
        if n < 2 {
            return Err(invalid_arg("a navigation graph needs at least two nodes"));
        }
        if landmarks.len() != n {
            return Err(invalid_arg("one landmark per node required"));
        }
        if landmarks.iter().any(|l| l.color as usize >= COLORS || l.noun as usize >= NOUNS) {
            return Err(invalid_arg("landmark index out of range"));
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n || a == b {
                return Err(invalid_arg(format!("bad edge ({a}, {b}) for {n} nodes")));
            }
            if !neighbors[a].contains(&b) {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for list in &mut neighbors {
            list.sort_unstable();
            if list.len() > VIEW_PATCHES {
                return Err(invalid_arg(format!("node degree {} exceeds {VIEW_PATCHES}", list.len())));
            }
        }
        let g = Self {
            id: id.into(),
            seed,
            split,
            positions,
            landmarks,
            neighbors,
            style: world_style(seed),
            planner_calls: AtomicU64::new(0),
        };
        if !g.is_connected() {
            return Err(invalid_arg("navigation graph is not connected"));
        }
        Ok(g)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn node_count(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, node: usize) -> [f64; 2] {
        self.positions[node]
    }

    pub fn landmark(&self, node: usize) -> Landmark {
        self.landmarks[node]
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(a, ns)| ns.iter().filter(move |&&b| b > a).map(move |&b| (a, b)))
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let [ax, ay] = self.positions[a];
        let [bx, by] = self.positions[b];
        (ax - bx).hypot(ay - by)
    }

    /// Direction of travel from `a` to `b`, radians in `(-pi, pi]`.
    pub fn heading(&self, a: usize, b: usize) -> f64 {
        let [ax, ay] = self.positions[a];
        let [bx, by] = self.positions[b];
        (by - ay).atan2(bx - ax)
    }

    /// Index of the view patch whose heading is closest to `heading`.
    pub fn nearest_patch(heading: f64) -> usize {
        let step = 2.0 * PI / VIEW_PATCHES as f64;
        (heading.rem_euclid(2.0 * PI) / step).round() as usize % VIEW_PATCHES
    }

    pub fn check_node(&self, node: usize) -> Result<()> {
        if node < self.node_count() {
            Ok(())
        } else {
            Err(invalid_arg(format!("node {node} not in world {} ({} nodes)", self.id, self.node_count())))
        }
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.node_count()];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Neighbour reached by taking edge `action` at `node`.
    pub fn step(&self, node: usize, action: usize) -> Result<usize> {
        self.check_node(node)?;
        self.neighbors[node].get(action).copied().ok_or_else(|| {
            invalid_arg(format!("action {action} out of range at node {node} (degree {})", self.degree(node)))
        })
    }

    /// Edge index at `from` leading to `to`, if adjacent.
    pub fn action_to(&self, from: usize, to: usize) -> Option<usize> {
        self.neighbors.get(from)?.iter().position(|&n| n == to)
    }

    /// Feature of view patch `patch` at `node`; a pure function of `(seed, node, patch)`.
    pub fn patch_feature(&self, node: usize, patch: usize) -> [f64; FEATURE_DIM] {
        let mut f = [0.0; FEATURE_DIM];
        let lm = self.landmarks[node];
        f[lm.color as usize] = 1.0;
        f[COLORS + lm.noun as usize] = 1.0;
        let heading = 2.0 * PI * patch as f64 / VIEW_PATCHES as f64;
        f[HEADING_OFFSET] = heading.sin();
        f[HEADING_OFFSET + 1] = heading.cos();
        f[HEADING_OFFSET + 2] = (2.0 * heading).sin();
        f[HEADING_OFFSET + 3] = (2.0 * heading).cos();
        let base = seeding::mix(seeding::mix(self.seed, node as u64), patch as u64);
        for k in 0..NOISE_DIMS {
            let u = seeding::unit(seeding::mix(base, k as u64)) - 0.5;
            f[NOISE_OFFSET + k] = 0.5 * self.style[k] + 0.5 * u;
        }
        f
    }

    /// All view patches of `node` as an `m x d_f` tensor.
    pub fn features(&self, node: usize) -> Result<Tensor> {
        self.check_node(node)?;
        let mut values = Vec::with_capacity(VIEW_PATCHES * FEATURE_DIM);
        for j in 0..VIEW_PATCHES {
            values.extend_from_slice(&self.patch_feature(node, j));
        }
        Tensor::matrix(VIEW_PATCHES, FEATURE_DIM, values)
    }

    /// Row-major `m x d_f` patch features.
    pub fn feature_rows(&self, node: usize) -> Vec<f64> {
        (0..VIEW_PATCHES).flat_map(|j| self.patch_feature(node, j)).collect()
    }

    /// Raw feature of the patch facing neighbour `action` of `node`.
    pub fn action_patch(&self, node: usize, action: usize) -> [f64; FEATURE_DIM] {
        let next = self.neighbors[node][action];
        self.patch_feature(node, Self::nearest_patch(self.heading(node, next)))
    }

    /// Candidate descriptor for edge `action` of `node`: the facing patch feature
    /// followed by `sin, cos, sin 2x, cos 2x` of the exact edge heading.
    pub fn action_feature(&self, node: usize, action: usize) -> [f64; ACTION_FEATURE_DIM] {
        let next = self.neighbors[node][action];
        let heading = self.heading(node, next);
        let mut out = [0.0; ACTION_FEATURE_DIM];
        out[..FEATURE_DIM].copy_from_slice(&self.patch_feature(node, Self::nearest_patch(heading)));
        out[FEATURE_DIM] = heading.sin();
        out[FEATURE_DIM + 1] = heading.cos();
        out[FEATURE_DIM + 2] = (2.0 * heading).sin();
        out[FEATURE_DIM + 3] = (2.0 * heading).cos();
        out
    }

    /// Number of shortest-path planner invocations against this graph.
    pub fn planner_calls(&self) -> u64 {
        self.planner_calls.load(Ordering::Relaxed)
    }

    pub(crate) fn count_planner_call(&self) {
        self.planner_calls.fetch_add(1, Ordering::Relaxed);
    }

    /// Geometric-length-minimal path; ties go to the smaller next-node id.
    pub fn shortest_path(&self, a: usize, b: usize) -> Result<Path> {
        self.check_node(a)?;
        self.check_node(b)?;
        if a == b {
            return Err(invalid_arg("shortest path needs distinct endpoints"));
        }
        let table = DistanceTable::to_goal(self, b);
        let mut nodes = vec![a];
        let mut cur = a;
        while cur != b {
            cur = table.next_hop(self, cur).expect("connected graph");
            nodes.push(cur);
        }
        Path::from_nodes(self, nodes)
    }
}

/// Generates a connected random geometric world with edges in `[MIN_EDGE, MAX_EDGE]`.
///
/// Nodes are grown outward: each new node lands at edge range from an existing
/// node of spare degree and at least `MIN_EDGE` from every other node, which
/// supplies a spanning tree. Remaining in-range pairs become edges with
/// probability `EXTRA_EDGE_PROB` while degrees allow.
pub fn generate_world(
    id: impl Into<String>,
    seed: u64,
    node_count: usize,
    split: Split,
) -> Result<NavGraph> {
    if node_count < MIN_NODES {
        return Err(invalid_arg(format!("node count {node_count} below minimum {MIN_NODES}")));
    }
    let mut rng = seeding::rng(seed, "world", node_count as u64);
    let mut positions: Vec<[f64; 2]> = vec![[0.0, 0.0]];
    let mut degree = vec![0usize];
    let mut edges = Vec::new();
    let mut attempts = 0usize;
    while positions.len() < node_count {
        attempts += 1;
        if attempts > 200_000 {
            return Err(Error::InvalidState("world growth failed to place nodes".into()));
        }
        let parent = rng.gen_range(0..positions.len());
        if degree[parent] >= VIEW_PATCHES - 1 {
            continue;
        }
        let angle = rng.gen_range(-PI..PI);
        let r = rng.gen_range(MIN_EDGE..MAX_EDGE);
        let [px, py] = positions[parent];
        let cand = [px + r * angle.cos(), py + r * angle.sin()];
        let clear = positions
            .iter()
            .all(|p| (p[0] - cand[0]).hypot(p[1] - cand[1]) >= MIN_EDGE);
        if !clear {
            continue;
        }
        let node = positions.len();
        positions.push(cand);
        degree.push(1);
        degree[parent] += 1;
        edges.push((parent, node));
    }
    let n = positions.len();
    for a in 0..n {
        for b in a + 1..n {
            let d = (positions[a][0] - positions[b][0]).hypot(positions[a][1] - positions[b][1]);
            if !(MIN_EDGE..=MAX_EDGE).contains(&d) || edges.contains(&(a, b)) || edges.contains(&(b, a)) {
                continue;
            }
            if rng.gen::<f64>() < EXTRA_EDGE_PROB && degree[a] < VIEW_PATCHES && degree[b] < VIEW_PATCHES {
                degree[a] += 1;
                degree[b] += 1;
                edges.push((a, b));
            }
        }
    }
    let landmarks = (0..n)
        .map(|_| Landmark { color: rng.gen_range(0..COLORS as u8), noun: rng.gen_range(0..NOUNS as u8) })
        .collect();
    NavGraph::from_parts(id, seed, split, positions, landmarks, &edges)
}

/// Ordered node walk within one world.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub env: String,
    pub nodes: Vec<usize>,
    pub actions: Vec<usize>,
    pub length: f64,
}

impl Path {
    pub fn from_nodes(g: &NavGraph, nodes: Vec<usize>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(invalid_arg("a path needs at least one step"));
        }
        let mut actions = Vec::with_capacity(nodes.len() - 1);
        let mut length = 0.0;
        for w in nodes.windows(2) {
            g.check_node(w[0])?;
            let a = g.action_to(w[0], w[1]).ok_or_else(|| {
                invalid_arg(format!("nodes {} and {} are not adjacent in {}", w[0], w[1], g.id()))
            })?;
            actions.push(a);
            length += g.distance(w[0], w[1]);
        }
        Ok(Self { env: g.id().to_string(), nodes, actions, length })
    }

    pub fn start(&self) -> usize {
        self.nodes[0]
    }

    pub fn end(&self) -> usize {
        *self.nodes.last().expect("non-empty path")
    }

    pub fn hops(&self) -> usize {
        self.actions.len()
    }
}
