//! Pose graphs: joints as nodes, undirected edges, bidirectional messages.

use crate::error::{Error, Result};
use crate::rng::fnv1a64;
use crate::skeleton::{joints, Skeleton};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Tree,
    Loopy,
    Custom,
}

impl GraphKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            GraphKind::Tree => "tree",
            GraphKind::Loopy => "loopy",
            GraphKind::Custom => "custom",
        }
    }
}

impl std::str::FromStr for GraphKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tree" => Ok(GraphKind::Tree),
            "loopy" => Ok(GraphKind::Loopy),
            "custom" => Ok(GraphKind::Custom),
            other => Err(Error::Graph(format!("unknown graph kind '{other}'"))),
        }
    }
}

/// An undirected simple graph over the joint set. Edges are stored
/// normalized (u < v) and sorted, so equal graphs compare equal and every
/// derived iteration order is fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoseGraph {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    kind: GraphKind,
}

impl PoseGraph {
    pub fn new(num_nodes: usize, edges: Vec<(usize, usize)>, kind: GraphKind) -> Result<Self> {
        let mut norm: Vec<(usize, usize)> = edges
            .into_iter()
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        norm.sort_unstable();
        norm.dedup();
        let g = PoseGraph { num_nodes, edges: norm, kind };
        g.validate().map_err(Error::GraphInvalid)?;
        Ok(g)
    }

    /// Kinematic tree: one edge per skeleton parent link.
    pub fn tree(skeleton: &Skeleton) -> PoseGraph {
        PoseGraph::new(skeleton.num_joints(), skeleton.tree_edges(), GraphKind::Tree)
            .expect("kinematic tree is a valid tree")
    }

    /// Tree plus the shoulder-wrist, ankle-hip and shoulder-hip shortcuts on
    /// both body sides.
    pub fn loopy(skeleton: &Skeleton) -> PoseGraph {
        let mut edges = skeleton.tree_edges();
        edges.extend(loopy_extras());
        PoseGraph::new(skeleton.num_joints(), edges, GraphKind::Loopy)
            .expect("loopy preset is valid")
    }

    pub fn custom(num_nodes: usize, edges: Vec<(usize, usize)>) -> Result<PoseGraph> {
        PoseGraph::new(num_nodes, edges, GraphKind::Custom)
    }

    /// A path graph 0-1-2-...-(n-1); handy for small oracle setups.
    pub fn chain(num_nodes: usize) -> PoseGraph {
        let edges = (1..num_nodes).map(|i| (i - 1, i)).collect();
        PoseGraph::custom(num_nodes, edges).expect("chain is valid")
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    /// Both directions of every edge, sorted by (src, dst).
    pub fn directed_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edges.len() * 2);
        for &(u, v) in &self.edges {
            out.push((u, v));
            out.push((v, u));
        }
        out.sort_unstable();
        out
    }

    pub fn neighbors(&self, k: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for &(u, v) in &self.edges {
            if u == k {
                out.push(v);
            } else if v == k {
                out.push(u);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn degree(&self, k: usize) -> usize {
        self.edges.iter().filter(|&&(u, v)| u == k || v == k).count()
    }

    /// BFS hop counts from `start`; `None` for unreachable nodes.
    pub fn distances_from(&self, start: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_nodes];
        let mut queue = std::collections::VecDeque::new();
        dist[start] = Some(0);
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            let du = dist[u].unwrap();
            for v in self.neighbors(u) {
                if dist[v].is_none() {
                    dist[v] = Some(du + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        if self.num_nodes == 0 {
            return true;
        }
        self.distances_from(0).iter().all(|d| d.is_some())
    }

    /// All invariant violations, each naming the offending edge or property.
    pub fn validate(&self) -> std::result::Result<(), Vec<String>> {
        let mut problems = Vec::new();
        for &(u, v) in &self.edges {
            if u == v {
                problems.push(format!("self-loop ({u}, {v})"));
            }
            if u >= self.num_nodes || v >= self.num_nodes {
                problems.push(format!(
                    "edge ({u}, {v}) out of range for {} nodes",
                    self.num_nodes
                ));
            }
        }
        // duplicates cannot survive the constructor, but a hand-built value
        // deserialized elsewhere could carry them
        for w in self.edges.windows(2) {
            if w[0] == w[1] {
                problems.push(format!("duplicate edge ({}, {})", w[0].0, w[0].1));
            }
        }
        if !problems.is_empty() {
            return Err(problems);
        }
        match self.kind {
            GraphKind::Tree => {
                if self.edges.len() != self.num_nodes.saturating_sub(1) {
                    problems.push(format!(
                        "tree must have {} edges, has {}",
                        self.num_nodes.saturating_sub(1),
                        self.edges.len()
                    ));
                }
                if !self.is_connected() {
                    problems.push("tree-tagged graph is not connected".to_string());
                }
            }
            GraphKind::Loopy => {
                if self.num_nodes == 14 {
                    let tree = Skeleton::lsp14().tree_edges();
                    for (u, v) in tree {
                        let e = (u.min(v), u.max(v));
                        if !self.edges.contains(&e) {
                            problems.push(format!("loopy graph is missing tree edge ({}, {})", e.0, e.1));
                        }
                    }
                } else {
                    problems.push(format!(
                        "loopy preset is defined for 14 nodes, graph has {}",
                        self.num_nodes
                    ));
                }
            }
            GraphKind::Custom => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }

    /// Stable digest of (K, kind, edge list); stored in checkpoints so a
    /// loaded model can be checked against the configured graph.
    pub fn digest(&self) -> u64 {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(self.num_nodes as u64).to_le_bytes());
        buf.extend_from_slice(self.kind.as_str().as_bytes());
        for &(u, v) in &self.edges {
            buf.extend_from_slice(&(u as u32).to_le_bytes());
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        fnv1a64(&buf)
    }

    /// Text form: header `K <n> kind <tree|loopy|custom>`, then one `u v`
    /// line per edge.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "K {} kind {}", self.num_nodes, self.kind.as_str());
        for &(u, v) in &self.edges {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<PoseGraph> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Graph("empty graph text".to_string()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "K" || parts[2] != "kind" {
            return Err(Error::Graph(format!(
                "bad header '{header}', expected 'K <n> kind <tree|loopy|custom>'"
            )));
        }
        let num_nodes: usize = parts[1]
            .parse()
            .map_err(|_| Error::Graph(format!("bad node count '{}'", parts[1])))?;
        let kind: GraphKind = parts[3].parse()?;
        let mut edges = Vec::new();
        for line in lines {
            let mut it = line.split_whitespace();
            let (u, v) = (it.next(), it.next());
            match (u, v, it.next()) {
                (Some(u), Some(v), None) => {
                    let u: usize = u
                        .parse()
                        .map_err(|_| Error::Graph(format!("bad edge line '{line}'")))?;
                    let v: usize = v
                        .parse()
                        .map_err(|_| Error::Graph(format!("bad edge line '{line}'")))?;
                    edges.push((u, v));
                }
                _ => return Err(Error::Graph(format!("bad edge line '{line}'"))),
            }
        }
        PoseGraph::new(num_nodes, edges, kind)
    }
}

/// The six loopy shortcuts (both body sides).
fn loopy_extras() -> Vec<(usize, usize)> {
    use joints::*;
    vec![
        (L_SHOULDER, L_WRIST),
        (R_SHOULDER, R_WRIST),
        (L_ANKLE, L_HIP),
        (R_ANKLE, R_HIP),
        (L_SHOULDER, L_HIP),
        (R_SHOULDER, R_HIP),
    ]
}
