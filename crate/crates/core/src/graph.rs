//! Undirected network topology with ordered edges, neighbor partitions and
//! incidence matrices.
//!
//! Agents are identified by 1-based indices. Every edge is normalized to the
//! pair `(i, j)` with `i < j`, and the edge list is kept in ascending
//! lexicographic order. That order is the canonical stacking order for all
//! edge-indexed vectors in this crate (dual variables, incidence rows, trace
//! columns); nothing else may reorder them.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// 1-based agent identifier.
pub type AgentId = usize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) appears more than once")]
    DuplicateEdge(AgentId, AgentId),
    #[error("self-loop at agent {0}")]
    SelfLoop(AgentId),
    #[error("graph is not connected")]
    Disconnected,
    #[error("agent index {0} out of range 1..={1}")]
    IndexOutOfRange(AgentId, usize),
    #[error("at least 2 agents required, got {0}")]
    TooFewAgents(usize),
}

/// A connected undirected graph on agents `1..=n` with lexicographically
/// ordered edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    edges: Vec<(AgentId, AgentId)>,
}

impl Topology {
    /// Builds a topology from an unordered edge list.
    ///
    /// Edges are normalized to `(min, max)` and sorted. Duplicates (in either
    /// orientation), self-loops, out-of-range endpoints and disconnected
    /// graphs are rejected.
    pub fn new(n: usize, edge_list: &[(AgentId, AgentId)]) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooFewAgents(n));
        }
        let mut edges = Vec::with_capacity(edge_list.len());
        for &(a, b) in edge_list {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            for v in [a, b] {
                if v < 1 || v > n {
                    return Err(GraphError::IndexOutOfRange(v, n));
                }
            }
            edges.push((a.min(b), a.max(b)));
        }
        edges.sort_unstable();
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(GraphError::DuplicateEdge(w[0].0, w[0].1));
        }
        let t = Topology { n, edges };
        if !t.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Edge count `m`.
    pub fn m(&self) -> usize {
        self.edges.len()
    }

    /// Edges in ascending lexicographic order, each as `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(AgentId, AgentId)] {
        &self.edges
    }

    /// Lexicographic rank of edge `(i, j)` (orientation-insensitive).
    pub fn edge_index(&self, i: AgentId, j: AgentId) -> Option<usize> {
        let key = (i.min(j), i.max(j));
        self.edges.binary_search(&key).ok()
    }

    fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n + 1];
        let mut stack = vec![1];
        seen[1] = true;
        let mut adj = vec![Vec::new(); self.n + 1];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen[1..].iter().all(|&s| s)
    }

    /// Path graph 1-2-...-n.
    pub fn path(n: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..n).map(|i| (i, i + 1)).collect();
        Topology::new(n, &edges)
    }

    /// Cycle graph.
    pub fn ring(n: usize) -> Result<Self, GraphError> {
        if n < 3 {
            return Err(GraphError::TooFewAgents(n));
        }
        let mut edges: Vec<_> = (1..n).map(|i| (i, i + 1)).collect();
        edges.push((1, n));
        Topology::new(n, &edges)
    }

    /// Complete graph on n agents.
    pub fn complete(n: usize) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for i in 1..=n {
            for j in (i + 1)..=n {
                edges.push((i, j));
            }
        }
        Topology::new(n, &edges)
    }

    /// Erdős–Rényi G(n, p), redrawn until connected (up to 1000 attempts).
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self, GraphError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let mut edges = Vec::new();
            for i in 1..=n {
                for j in (i + 1)..=n {
                    if rng.random::<f64>() < p {
                        edges.push((i, j));
                    }
                }
            }
            match Topology::new(n, &edges) {
                Ok(t) => return Ok(t),
                Err(GraphError::Disconnected) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(GraphError::Disconnected)
    }

    /// Seeded random connected graph: a random spanning tree plus up to `n`
    /// extra random edges. Connected by construction.
    pub fn random_connected(n: usize, seed: u64) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooFewAgents(n));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<AgentId> = (1..=n).collect();
        // Fisher-Yates
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut edges = BTreeSet::new();
        for idx in 1..n {
            let a = order[idx];
            let b = order[rng.random_range(0..idx)];
            edges.insert((a.min(b), a.max(b)));
        }
        let extra = rng.random_range(0..=n);
        for _ in 0..extra {
            let a = rng.random_range(1..=n);
            let b = rng.random_range(1..=n);
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let edges: Vec<_> = edges.into_iter().collect();
        Topology::new(n, &edges)
    }
}

/// Per-agent neighbor sets split by index order: predecessors have smaller
/// index, successors larger.
#[derive(Debug, Clone)]
pub struct NeighborPartition {
    neighbors: Vec<BTreeSet<AgentId>>,
    predecessors: Vec<BTreeSet<AgentId>>,
    successors: Vec<BTreeSet<AgentId>>,
}

impl NeighborPartition {
    pub fn from_topology(t: &Topology) -> Self {
        let mut neighbors = vec![BTreeSet::new(); t.n() + 1];
        let mut predecessors = vec![BTreeSet::new(); t.n() + 1];
        let mut successors = vec![BTreeSet::new(); t.n() + 1];
        for &(i, j) in t.edges() {
            neighbors[i].insert(j);
            neighbors[j].insert(i);
            successors[i].insert(j);
            predecessors[j].insert(i);
        }
        NeighborPartition {
            neighbors,
            predecessors,
            successors,
        }
    }

    pub fn neighbors(&self, i: AgentId) -> &BTreeSet<AgentId> {
        &self.neighbors[i]
    }

    pub fn predecessors(&self, i: AgentId) -> &BTreeSet<AgentId> {
        &self.predecessors[i]
    }

    pub fn successors(&self, i: AgentId) -> &BTreeSet<AgentId> {
        &self.successors[i]
    }

    pub fn degree(&self, i: AgentId) -> usize {
        self.neighbors[i].len()
    }
}

/// The m×n edge-node incidence matrix `a` and its split into positive part
/// `b = max{0, a}` and negative part `e = a - b`.
///
/// Row r corresponds to the r-th edge `(p, q)` in lexicographic order and
/// holds +1 in column p-1 and -1 in column q-1.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceSet {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub e: DMatrix<f64>,
}

impl IncidenceSet {
    pub fn from_topology(t: &Topology) -> Self {
        let (m, n) = (t.m(), t.n());
        let mut a = DMatrix::zeros(m, n);
        for (r, &(p, q)) in t.edges().iter().enumerate() {
            a[(r, p - 1)] = 1.0;
            a[(r, q - 1)] = -1.0;
        }
        let b = a.map(|v: f64| v.max(0.0));
        let e = &a - &b;
        IncidenceSet { a, b, e }
    }
}

/// Builds a [`Topology`] from an unordered edge list. See [`Topology::new`].
pub fn build_topology(n: usize, edge_list: &[(AgentId, AgentId)]) -> Result<Topology, GraphError> {
    Topology::new(n, edge_list)
}

/// Splits each agent's neighbor set into predecessors and successors.
pub fn partition_neighbors(t: &Topology) -> NeighborPartition {
    NeighborPartition::from_topology(t)
}

/// Builds the incidence matrices for a topology.
pub fn build_incidence(t: &Topology) -> IncidenceSet {
    IncidenceSet::from_topology(t)
}
