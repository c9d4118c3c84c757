//! Communication graphs and doubly-stochastic consensus weights.
//!
//! Graphs are undirected: every edge `{i, j}` is a bidirectional link, so the
//! in-neighbor set of an agent equals its neighbor set. Random graphs are drawn
//! from [`ChaCha8Rng`] seeded with `seed_from_u64`, which is a portable,
//! counter-based stream cipher generator; the same seed yields the same graph on
//! every platform.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance used when validating row and column sums of a weight matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// Undirected simple graph over agents `0..n_agents`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n_agents: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from unordered pairs. Duplicates collapse; self-loops and
    /// out-of-range endpoints are rejected. Connectivity is not required here.
    pub fn from_edges(n_agents: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n_agents == 0 {
            return Err(Error::InvalidGraph("graph needs at least one agent".into()));
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(Error::InvalidGraph(format!("self-loop at agent {a}")));
            }
            if a >= n_agents || b >= n_agents {
                return Err(Error::InvalidGraph(format!(
                    "edge ({a}, {b}) out of range for {n_agents} agents"
                )));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();

        let mut neighbors = vec![Vec::new(); n_agents];
        for &(a, b) in &normalized {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        Ok(Self {
            n_agents,
            edges: normalized,
            neighbors,
        })
    }

    pub fn complete(n_agents: usize) -> Self {
        let edges: Vec<_> = (0..n_agents)
            .flat_map(|i| (i + 1..n_agents).map(move |j| (i, j)))
            .collect();
        Self::from_edges(n_agents, &edges).expect("complete graph is valid")
    }

    pub fn path(n_agents: usize) -> Self {
        let edges: Vec<_> = (1..n_agents).map(|i| (i - 1, i)).collect();
        Self::from_edges(n_agents, &edges).expect("path graph is valid")
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    /// Edges as sorted pairs `(i, j)` with `i < j`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor list of `agent`.
    pub fn neighbors(&self, agent: usize) -> &[usize] {
        &self.neighbors[agent]
    }

    pub fn degree(&self, agent: usize) -> usize {
        self.neighbors[agent].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Connectivity via union-find over the edge list.
    pub fn is_connected(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.n_agents).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut components = self.n_agents;
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra] = rb;
                components -= 1;
            }
        }
        components == 1
    }

    /// Line-oriented text: the agent count, then one `i j` line per edge.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.n_agents);
        for &(a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (line, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            msg: "missing agent count".into(),
        })?;
        let n_agents: usize = header.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad agent count `{header}`"),
        })?;
        let mut edges = Vec::new();
        for (line, l) in lines {
            let mut parts = l.split_whitespace();
            let mut next = || -> Result<usize> {
                parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line,
                        msg: format!("bad edge `{l}`"),
                    })
            };
            edges.push((next()?, next()?));
        }
        Self::from_edges(n_agents, &edges)
    }
}

/// Samples an Erdős–Rényi graph, redrawing until it is connected.
///
/// Pairs `(i, j)`, `i < j`, are visited in lexicographic order and kept when a
/// uniform draw in `[0, 1)` falls below `p`. A disconnected sample is discarded
/// and the next attempt continues from the advanced generator state.
pub fn erdos_renyi(n_agents: usize, p: f64, seed: u64, max_retries: usize) -> Result<Graph> {
    if n_agents < 2 {
        return Err(Error::InvalidParameter(format!(
            "erdos_renyi needs at least 2 agents, got {n_agents}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "edge probability {p} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_retries {
        let mut edges = Vec::new();
        for i in 0..n_agents {
            for j in i + 1..n_agents {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let graph = Graph::from_edges(n_agents, &edges)?;
        if graph.is_connected() {
            return Ok(graph);
        }
    }
    Err(Error::DisconnectedGraph {
        attempts: max_retries,
    })
}

/// Consensus weights `w_ij` matching a graph's sparsity.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    entries: DMatrix<f64>,
}

impl WeightMatrix {
    /// Validates nonnegativity, sparsity against `graph`, symmetry and double
    /// stochasticity.
    pub fn new(graph: &Graph, entries: DMatrix<f64>) -> Result<Self> {
        let n = graph.n_agents();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::InvalidWeights(format!(
                "expected {n}x{n} matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let w = entries[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidWeights(format!("w[{i},{j}] = {w}")));
                }
                if w > 0.0 && i != j && !graph.has_edge(i, j) {
                    return Err(Error::InvalidWeights(format!(
                        "w[{i},{j}] > 0 but ({i}, {j}) is not an edge"
                    )));
                }
                if (w - entries[(j, i)]).abs() > STOCHASTIC_TOL {
                    return Err(Error::InvalidWeights(format!(
                        "not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let weights = Self { entries };
        let (row, col) = weights.stochasticity_defect();
        if row > STOCHASTIC_TOL || col > STOCHASTIC_TOL {
            return Err(Error::InvalidWeights(format!(
                "not doubly stochastic (row defect {row:e}, column defect {col:e})"
            )));
        }
        Ok(weights)
    }

    pub fn n_agents(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Largest deviation of any row sum and any column sum from one.
    pub fn stochasticity_defect(&self) -> (f64, f64) {
        let n = self.entries.nrows();
        let row = (0..n)
            .map(|i| (self.entries.row(i).sum() - 1.0).abs())
            .fold(0.0, f64::max);
        let col = (0..n)
            .map(|j| (self.entries.column(j).sum() - 1.0).abs())
            .fold(0.0, f64::max);
        (row, col)
    }

    /// Second-largest singular value; governs the geometric rate of
    /// perturbed consensus.
    pub fn second_singular_value(&self) -> f64 {
        let mut sv: Vec<f64> = self
            .entries
            .clone()
            .svd(false, false)
            .singular_values
            .iter()
            .copied()
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv.get(1).copied().unwrap_or(0.0)
    }

    /// Row-major CSV of the full matrix.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.entries.nrows() {
            let row: Vec<String> = self.entries.row(i).iter().map(|w| w.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(graph: &Graph, text: &str) -> Result<Self> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    msg: e.to_string(),
                })?;
            rows.push(row);
        }
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidWeights("ragged CSV matrix".into()));
        }
        let entries = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(graph, entries)
    }
}

/// Metropolis–Hastings weights: `w_ij = 1 / (1 + max(deg_i, deg_j))` on edges,
/// the self-weight takes up the slack.
pub fn metropolis_weights(graph: &Graph) -> Result<WeightMatrix> {
    if !graph.is_connected() {
        return Err(Error::NotConnected);
    }
    let n = graph.n_agents();
    let mut w = DMatrix::zeros(n, n);
    for &(a, b) in graph.edges() {
        let value = 1.0 / (1.0 + graph.degree(a).max(graph.degree(b)) as f64);
        w[(a, b)] = value;
        w[(b, a)] = value;
    }
    for i in 0..n {
        let off: f64 = graph.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    WeightMatrix::new(graph, w)
}

/// A graph together with its consensus weights.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: Graph,
    pub weights: WeightMatrix,
}

impl Network {
    pub fn new(graph: Graph, weights: WeightMatrix) -> Result<Self> {
        if graph.n_agents() != weights.n_agents() {
            return Err(Error::InvalidWeights(
                "weight matrix size differs from graph".into(),
            ));
        }
        Ok(Self { graph, weights })
    }

    pub fn metropolis(graph: Graph) -> Result<Self> {
        let weights = metropolis_weights(&graph)?;
        Ok(Self { graph, weights })
    }

    pub fn n_agents(&self) -> usize {
        self.graph.n_agents()
    }
}
