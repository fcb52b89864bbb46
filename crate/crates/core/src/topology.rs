//! Overlay topologies: generation, edge-list I/O, aggregation matrices, and
//! structural statistics.
//!
//! A [`Topology`] is an undirected, simple, connected graph on nodes
//! `0..n_nodes`. Every constructor validates those invariants, so downstream
//! code can assume them.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{self, Matrix};
use crate::seed;

/// Whole-graph resamples allowed before Erdős–Rényi generation gives up.
pub const ER_MAX_ATTEMPTS: usize = 10_000;
pub const LAMBDA2_TOL: f64 = 1e-10;
pub const LAMBDA2_MAX_ITERS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Topology {
    n_nodes: usize,
    /// Sorted, each pair stored as `(lo, hi)` with `lo < hi`.
    edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Builds a topology from an arbitrary list of undirected pairs.
    pub fn new(n_nodes: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::InvalidSize(format!("need at least 2 nodes, got {n_nodes}")));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            for idx in [u, v] {
                if idx >= n_nodes {
                    return Err(Error::Index { index: idx, n_nodes });
                }
            }
            if u == v {
                return Err(Error::InvalidConfig(format!("self-loop on node {u}")));
            }
            if !set.insert((u.min(v), u.max(v))) {
                return Err(Error::InvalidConfig(format!("duplicate edge ({u}, {v})")));
            }
        }
        // Fewer than N−1 edges cannot connect N nodes; checked before any O(N) allocation.
        if set.len() + 1 < n_nodes {
            return Err(Error::DisconnectedGraph);
        }
        let topo = Self { n_nodes, edges: set.into_iter().collect() };
        if !topo.is_connected() {
            return Err(Error::DisconnectedGraph);
        }
        Ok(topo)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.binary_search(&(u.min(v), u.max(v))).is_ok()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn adjacency(&self) -> AdjacencyMatrix {
        let mut values = vec![vec![0u8; self.n_nodes]; self.n_nodes];
        for &(u, v) in &self.edges {
            values[u][v] = 1;
            values[v][u] = 1;
        }
        AdjacencyMatrix { values }
    }

    fn is_connected(&self) -> bool {
        connected(self.n_nodes, &self.edges)
    }

    /// Edge-list text: `N M` header then one `u v` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("{} {}\n", self.n_nodes, self.edges.len());
        for &(u, v) in &self.edges {
            let _ = writeln!(out, "{u} {v}");
        }
        out
    }
}

fn connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &(u, v) in edges {
        adj[u].push(v);
        adj[v].push(u);
    }
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == n
}

/// Symmetric 0/1 adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    values: Vec<Vec<u8>>,
}

impl AdjacencyMatrix {
    /// Validates symmetry, zero diagonal, and binary entries.
    pub fn from_rows(values: Vec<Vec<u8>>) -> Result<Self> {
        let n = values.len();
        for (i, row) in values.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape("adjacency must be square".into()));
            }
            if row[i] != 0 {
                return Err(Error::InvalidConfig(format!("self-loop on node {i}")));
            }
            for (j, &v) in row.iter().enumerate() {
                if v > 1 || values[j][i] != v {
                    return Err(Error::InvalidConfig(format!(
                        "adjacency entry ({i}, {j}) is not symmetric binary"
                    )));
                }
            }
        }
        Ok(Self { values })
    }

    /// Builds the adjacency with an edge `(i, j)`, `i < j`, wherever `edge(i, j)` holds.
    pub fn from_predicate(n: usize, mut edge: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = vec![vec![0u8; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                if edge(i, j) {
                    values[i][j] = 1;
                    values[j][i] = 1;
                }
            }
        }
        Self { values }
    }

    pub fn n_nodes(&self) -> usize {
        self.values.len()
    }

    pub fn n_edges(&self) -> usize {
        self.values.iter().flatten().map(|&v| v as usize).sum::<usize>() / 2
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.values[i][j] == 1
    }

    pub fn degree(&self, i: usize) -> usize {
        self.values[i].iter().map(|&v| v as usize).sum()
    }

    pub fn to_topology(&self) -> Result<Topology> {
        let n = self.n_nodes();
        let edges = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j)));
        Topology::new(n, edges.filter(|&(i, j)| self.get(i, j)))
    }
}

/// Row-stochastic `D^{-1}(A + I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMatrix {
    values: Matrix,
}

impl AggregationMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.values
    }

    pub fn n_nodes(&self) -> usize {
        self.values.rows()
    }
}

/// `P[i][j] = (A[i][j] + [i = j]) / (degree(i) + 1)`.
pub fn aggregation_matrix(a: &AdjacencyMatrix) -> Result<AggregationMatrix> {
    let n = a.n_nodes();
    let edges: Vec<_> = (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| a.get(i, j))
        .collect();
    if n == 0 || !connected(n, &edges) {
        return Err(Error::DisconnectedGraph);
    }
    let values = Matrix::from_fn(n, n, |i, j| {
        let w = f64::from(u8::from(a.get(i, j) || i == j));
        w / (a.degree(i) + 1) as f64
    });
    Ok(AggregationMatrix { values })
}

pub fn gen_ring(n: usize) -> Result<Topology> {
    if n < 3 {
        return Err(Error::InvalidSize(format!("ring needs n >= 3, got {n}")));
    }
    Topology::new(n, (0..n).map(|i| (i, (i + 1) % n)))
}

/// Node 0 is the hub.
pub fn gen_star(n: usize) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("star needs n >= 2, got {n}")));
    }
    Topology::new(n, (1..n).map(|i| (0, i)))
}

/// G(n, p), resampled whole until connected.
///
/// Pairs are visited in lexicographic order and each consumes exactly one
/// uniform draw from a ChaCha8 stream, so the output is bit-identical for a
/// given `(n, p, seed)` on every platform.
pub fn gen_erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Topology> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("Erdős–Rényi needs n >= 2, got {n}")));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    let mut rng = seed::rng(seed);
    for _ in 0..ER_MAX_ATTEMPTS {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        if connected(n, &edges) {
            return Topology::new(n, edges);
        }
    }
    Err(Error::GenerationFailed(format!(
        "no connected G({n}, {p}) sample within {ER_MAX_ATTEMPTS} attempts"
    )))
}

/// Parses the edge-list format. `#` starts a comment line; blank lines are
/// ignored. Line numbers in errors are 1-based positions in `text`.
pub fn load_topology(text: &str) -> Result<Topology> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
    let [n, m] = parse_pair(hline, header)?;

    let mut edges = Vec::with_capacity(m.min(1 << 16));
    let mut last_line = hline;
    for (lineno, line) in lines {
        let [u, v] = parse_pair(lineno, line)?;
        for idx in [u, v] {
            if idx >= n {
                return Err(Error::Index { index: idx, n_nodes: n });
            }
        }
        if u == v {
            return Err(Error::parse(lineno, format!("self-loop on node {u}")));
        }
        edges.push((u, v));
        last_line = lineno;
        if edges.len() > m {
            return Err(Error::parse(lineno, format!("more than the declared {m} edges")));
        }
    }
    if edges.len() != m {
        return Err(Error::parse(
            last_line,
            format!("header declares {m} edges, found {}", edges.len()),
        ));
    }
    if n < 2 {
        return Err(Error::parse(hline, "need at least 2 nodes"));
    }
    let mut seen = BTreeSet::new();
    for &(u, v) in &edges {
        if !seen.insert((u.min(v), u.max(v))) {
            return Err(Error::parse(hline, format!("duplicate edge ({u}, {v})")));
        }
    }
    Topology::new(n, edges)
}

fn parse_pair(lineno: usize, line: &str) -> Result<[usize; 2]> {
    let mut toks = line.split_whitespace();
    let mut next = || -> Result<usize> {
        let tok = toks.next().ok_or_else(|| Error::parse(lineno, "expected two integers"))?;
        tok.parse().map_err(|_| Error::parse(lineno, format!("not a node index: {tok:?}")))
    };
    let pair = [next()?, next()?];
    if toks.next().is_some() {
        return Err(Error::parse(lineno, "trailing tokens"));
    }
    Ok(pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopologyStats {
    pub n_nodes: usize,
    pub n_edges: usize,
    /// `2E / N`.
    pub avg_degree: f64,
    /// `2E / (N (N - 1))`.
    pub density: f64,
    /// `|λ₂(P)|`, the second-largest eigenvalue modulus of the aggregation matrix.
    pub second_eigenvalue_modulus: f64,
}

pub fn stats(t: &Topology) -> TopologyStats {
    let n = t.n_nodes() as f64;
    let e = t.n_edges() as f64;
    TopologyStats {
        n_nodes: t.n_nodes(),
        n_edges: t.n_edges(),
        avg_degree: 2.0 * e / n,
        density: 2.0 * e / (n * (n - 1.0)),
        second_eigenvalue_modulus: second_eigenvalue_modulus(t),
    }
}

/// Power iteration for `|λ₂(P)|` with the all-ones eigenvector deflated.
///
/// `P = D^{-1}(A + I)` is similar to the symmetric `S = D^{-1/2}(A + I)D^{-1/2}`,
/// whose dominant eigenvector is `√d`. Iterating on `S` while projecting out
/// `√d` is the same as deflating the ones vector of `P`, and the spectrum is
/// real, so `‖S x‖` for unit `x` converges to `|λ₂|` even when `±λ₂` both occur.
pub fn second_eigenvalue_modulus(t: &Topology) -> f64 {
    let n = t.n_nodes();
    let d: Vec<f64> = t.degrees().iter().map(|&k| (k + 1) as f64).collect();
    let sqrt_d: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
    let top_norm = matrix::norm(&sqrt_d);
    let top: Vec<f64> = sqrt_d.iter().map(|v| v / top_norm).collect();

    let mut nbrs = vec![Vec::new(); n];
    for &(u, v) in t.edges() {
        nbrs[u].push(v);
        nbrs[v].push(u);
    }
    let apply = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let mut acc = x[i] / d[i];
                for &j in &nbrs[i] {
                    acc += x[j] / (sqrt_d[i] * sqrt_d[j]);
                }
                acc
            })
            .collect()
    };
    let deflate = |x: &mut Vec<f64>| {
        let c = matrix::dot(x, &top);
        for (xi, ti) in x.iter_mut().zip(&top) {
            *xi -= c * ti;
        }
    };

    let mut rng = seed::rng(0x5EED_1A2B);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    deflate(&mut x);
    let mut estimate = f64::NAN;
    for _ in 0..LAMBDA2_MAX_ITERS {
        let nx = matrix::norm(&x);
        if nx == 0.0 {
            return 0.0;
        }
        x.iter_mut().for_each(|v| *v /= nx);
        let mut y = apply(&x);
        deflate(&mut y);
        let next = matrix::norm(&y);
        // Floating-point residue in a deflated rank-one matrix (complete graph).
        if next < 1e-14 {
            return 0.0;
        }
        if (next - estimate).abs() < LAMBDA2_TOL {
            return next;
        }
        estimate = next;
        x = y;
    }
    estimate
}
