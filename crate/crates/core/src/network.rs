//! Communication graphs and doubly stochastic mixing matrices.
//!
//! A [`MixingMatrix`] is only ever constructed through validation, so holding
//! one guarantees symmetry, double stochasticity, nonnegativity and
//! `|λ₂(W)| < 1`. Its spectral quantities `β = |λ₂(W)|` and `λ_n(W)` are
//! computed once at construction.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, EigenError};
use crate::rng::{self, Stream};
use crate::state::AgentStates;

/// Row sums must match 1 to this absolute tolerance.
pub const STOCHASTIC_TOL: f64 = 1e-12;

/// `β` within this distance of 1 is treated as a disconnected spectrum.
pub const CONNECTIVITY_TOL: f64 = 1e-10;

/// Number of reseeded attempts before Watts–Strogatz gives up.
pub const MAX_REWIRE_ATTEMPTS: u64 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("invalid degree k={k} for n={n}: k must be even with 2 <= k < n")]
    InvalidDegree { n: usize, k: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("edge ({0}, {1}) is a self-loop or out of range")]
    InvalidEdge(usize, usize),
    #[error("graph is disconnected")]
    Disconnected,
    #[error("no connected Watts-Strogatz sample after {attempts} attempts")]
    DisconnectedAfterRetries { attempts: u64 },
    #[error("matrix is {rows}x{cols}, expected square and nonempty")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },
    #[error("row {row} sums to {sum}, expected 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("negative or non-finite weight at ({i}, {j})")]
    NegativeWeight { i: usize, j: usize },
    #[error("second eigenvalue magnitude {beta} is not below 1: null(I - W) is larger than span{{1}}")]
    NotConnected { beta: f64 },
    #[error(transparent)]
    Eigen(#[from] EigenError),
}

/// Undirected simple graph on agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphRepr", into = "GraphRepr")]
pub struct Graph {
    n: usize,
    /// Stored with `i < j`.
    edges: BTreeSet<(usize, usize)>,
}

#[derive(Serialize, Deserialize)]
struct GraphRepr {
    n: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphRepr> for Graph {
    type Error = NetworkError;
    fn try_from(r: GraphRepr) -> Result<Self, Self::Error> {
        Graph::new(r.n, r.edges.iter().map(|e| (e[0], e[1])))
    }
}

impl From<Graph> for GraphRepr {
    fn from(g: Graph) -> Self {
        GraphRepr {
            n: g.n,
            edges: g.edges.iter().map(|&(i, j)| [i, j]).collect(),
        }
    }
}

impl Graph {
    /// Connected graph from an edge list. Duplicate edges collapse.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, NetworkError> {
        let g = Self::unchecked(n, edges)?;
        if !g.is_connected() {
            return Err(NetworkError::Disconnected);
        }
        Ok(g)
    }

    fn unchecked(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, NetworkError> {
        if n == 0 {
            return Err(NetworkError::InvalidParameter("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j || i >= n || j >= n {
                return Err(NetworkError::InvalidEdge(i, j));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { n, edges: set })
    }

    /// Cycle `0 - 1 - … - (n-1) - 0`.
    pub fn ring(n: usize) -> Result<Self, NetworkError> {
        match n {
            1 => Self::new(1, []),
            2 => Self::new(2, [(0, 1)]),
            _ => Self::new(n, (0..n).map(|i| (i, (i + 1) % n))),
        }
    }

    pub fn complete(n: usize) -> Result<Self, NetworkError> {
        Self::new(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }
}

/// Small-world graph: ring lattice with `k/2` neighbors per side, each
/// lattice edge rewired with probability `rewire_p`.
///
/// Rewiring follows the classic scheme: for offset `j = 1..=k/2` and node
/// `u`, the edge `(u, u+j)` is replaced by `(u, w)` with `w` uniform among
/// nodes that are neither `u` nor already adjacent to `u`. The edge count
/// `n·k/2` is preserved. A disconnected sample is discarded and the draw
/// repeated with seed `seed + 1`, `seed + 2`, … up to
/// [`MAX_REWIRE_ATTEMPTS`] times.
pub fn build_watts_strogatz(
    n: usize,
    k: usize,
    rewire_p: f64,
    seed: u64,
) -> Result<Graph, NetworkError> {
    if n < 3 {
        return Err(NetworkError::InvalidParameter(format!(
            "Watts-Strogatz needs n >= 3, got {n}"
        )));
    }
    if k < 2 || k >= n || !k.is_multiple_of(2) {
        return Err(NetworkError::InvalidDegree { n, k });
    }
    if !(0.0..=1.0).contains(&rewire_p) {
        return Err(NetworkError::InvalidParameter(format!(
            "rewiring probability {rewire_p} outside [0, 1]"
        )));
    }
    for attempt in 0..MAX_REWIRE_ATTEMPTS {
        let g = watts_strogatz_sample(n, k, rewire_p, seed.wrapping_add(attempt));
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(NetworkError::DisconnectedAfterRetries {
        attempts: MAX_REWIRE_ATTEMPTS,
    })
}

fn watts_strogatz_sample(n: usize, k: usize, p: f64, seed: u64) -> Graph {
    let mut rng = rng::seeded(seed, Stream::Graph);
    let half = k / 2;
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for j in 1..=half {
        for u in 0..n {
            let v = (u + j) % n;
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    for j in 1..=half {
        for u in 0..n {
            let v = (u + j) % n;
            if rng.random::<f64>() >= p {
                continue;
            }
            // saturated node: nothing to rewire to
            if adj[u].len() >= n - 1 || !adj[u].contains(&v) {
                continue;
            }
            let mut w = rng.random_range(0..n);
            while w == u || adj[u].contains(&w) {
                w = rng.random_range(0..n);
            }
            adj[u].remove(&v);
            adj[v].remove(&u);
            adj[u].insert(w);
            adj[w].insert(u);
        }
    }
    let edges = adj
        .iter()
        .enumerate()
        .flat_map(|(u, nb)| nb.iter().filter(move |&&v| u < v).map(move |&v| (u, v)));
    Graph::unchecked(n, edges).expect("lattice edges are in range and loop-free")
}

/// Symmetric doubly stochastic consensus weights with cached spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixingRepr", into = "MixingRepr")]
pub struct MixingMatrix {
    w: DMatrix<f64>,
    /// Ascending.
    eigenvalues: Vec<f64>,
    beta: f64,
    lambda_min: f64,
    /// Nonzero entries of each row, for sparse mixing.
    support: Vec<Vec<(usize, f64)>>,
}

#[derive(Serialize, Deserialize)]
struct MixingRepr {
    n: usize,
    weights: Vec<Vec<f64>>,
    #[serde(default, skip_deserializing)]
    beta: f64,
    #[serde(default, skip_deserializing)]
    lambda_min: f64,
}

impl TryFrom<MixingRepr> for MixingMatrix {
    type Error = NetworkError;
    fn try_from(r: MixingRepr) -> Result<Self, Self::Error> {
        if r.weights.len() != r.n {
            return Err(NetworkError::NotSquare {
                rows: r.weights.len(),
                cols: r.n,
            });
        }
        explicit_matrix(&r.weights)
    }
}

impl From<MixingMatrix> for MixingRepr {
    fn from(m: MixingMatrix) -> Self {
        MixingRepr {
            n: m.n(),
            weights: crate::serde_util::to_rows(&m.w),
            beta: m.beta,
            lambda_min: m.lambda_min,
        }
    }
}

impl MixingMatrix {
    fn from_validated(w: DMatrix<f64>) -> Result<Self, NetworkError> {
        let (beta, lambda_min, eigenvalues) = spectrum(&w)?;
        if beta >= 1.0 - CONNECTIVITY_TOL {
            return Err(NetworkError::NotConnected { beta });
        }
        let n = w.nrows();
        let support = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| w[(i, j)] != 0.0)
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Self {
            w,
            eigenvalues,
            beta,
            lambda_min,
            support,
        })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// `β = |λ₂(W)|`, zero for a single agent.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Smallest eigenvalue `λ_n(W)`.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Nonzero `(j, w_ij)` pairs of row `i`.
    pub fn row_support(&self, i: usize) -> &[(usize, f64)] {
        &self.support[i]
    }

    /// `Σ_j w_ij x_j` for agent `i`.
    pub fn mix_row(&self, i: usize, x: &AgentStates) -> DVector<f64> {
        let rows = x.rows();
        let mut out = DVector::zeros(x.dim());
        for &(j, wij) in &self.support[i] {
            out.axpy(wij, &rows[j], 1.0);
        }
        out
    }

    /// `W x`, applied agentwise.
    pub fn mix(&self, x: &AgentStates) -> AgentStates {
        AgentStates::new((0..self.n()).map(|i| self.mix_row(i, x)).collect())
    }
}

/// Metropolis–Hastings weights `w_ij = 1/(1 + max(deg_i, deg_j))` on edges,
/// with the remaining mass on the diagonal.
pub fn metropolis_weights(g: &Graph) -> Result<MixingMatrix, NetworkError> {
    let n = g.n();
    let deg = g.degrees();
    let mut w = DMatrix::zeros(n, n);
    for (i, j) in g.edges() {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    MixingMatrix::from_validated(w)
}

/// Validate a user-supplied weight matrix.
pub fn explicit_matrix(entries: &[Vec<f64>]) -> Result<MixingMatrix, NetworkError> {
    let n = entries.len();
    if n == 0 || entries.iter().any(|r| r.len() != n) {
        return Err(NetworkError::NotSquare {
            rows: n,
            cols: entries.first().map_or(0, Vec::len),
        });
    }
    for i in 0..n {
        for j in 0..n {
            let v = entries[i][j];
            if !v.is_finite() || v < 0.0 {
                return Err(NetworkError::NegativeWeight { i, j });
            }
            if j > i && v != entries[j][i] {
                return Err(NetworkError::NotSymmetric { i, j });
            }
        }
        let sum: f64 = entries[i].iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(NetworkError::NotStochastic { row: i, sum });
        }
    }
    MixingMatrix::from_validated(DMatrix::from_fn(n, n, |i, j| entries[i][j]))
}

/// `(β, λ_min)` of a symmetric matrix: `β` is the second-largest eigenvalue
/// magnitude (zero when `n = 1`), `λ_min` the smallest eigenvalue.
pub fn spectral(w: &DMatrix<f64>) -> Result<(f64, f64), NetworkError> {
    let (beta, lambda_min, _) = spectrum(w)?;
    Ok((beta, lambda_min))
}

fn spectrum(w: &DMatrix<f64>) -> Result<(f64, f64, Vec<f64>), NetworkError> {
    if w.nrows() == 0 || w.nrows() != w.ncols() {
        return Err(NetworkError::NotSquare {
            rows: w.nrows(),
            cols: w.ncols(),
        });
    }
    let eig = linalg::symmetric_eigenvalues(w)?;
    let mut by_magnitude: Vec<f64> = eig.iter().map(|v| v.abs()).collect();
    by_magnitude.sort_by(|a, b| b.total_cmp(a));
    let beta = by_magnitude.get(1).copied().unwrap_or(0.0);
    Ok((beta, eig[0], eig))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn ring_lattice_without_rewiring_on_three_nodes_is_the_triangle() {
        let g = build_watts_strogatz(3, 2, 0.0, 0).unwrap();
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn full_rewiring_preserves_edge_count() {
        let g = build_watts_strogatz(10, 4, 1.0, 1).unwrap();
        assert!(g.is_connected());
        assert_eq!(g.edge_count(), 20);
    }

    #[test]
    fn regression_scale_graph_is_connected_with_min_degree_two() {
        let g = build_watts_strogatz(50, 4, 0.3, 7).unwrap();
        assert!(g.is_connected());
        assert_eq!(g.edge_count(), 100);
        assert!(g.degrees().iter().all(|&d| d >= 2), "{:?}", g.degrees());
    }

    #[test]
    fn watts_strogatz_is_deterministic_per_seed() {
        let a = build_watts_strogatz(30, 4, 0.5, 99).unwrap();
        let b = build_watts_strogatz(30, 4, 0.5, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn watts_strogatz_rejects_bad_degree() {
        assert!(matches!(
            build_watts_strogatz(10, 3, 0.1, 0),
            Err(NetworkError::InvalidDegree { .. })
        ));
        assert!(matches!(
            build_watts_strogatz(4, 4, 0.1, 0),
            Err(NetworkError::InvalidDegree { .. })
        ));
        assert!(matches!(
            build_watts_strogatz(10, 4, 1.5, 0),
            Err(NetworkError::InvalidParameter(_))
        ));
    }

    #[test]
    fn graph_rejects_self_loops_and_disconnection() {
        assert_eq!(Graph::new(3, [(1, 1)]), Err(NetworkError::InvalidEdge(1, 1)));
        assert_eq!(Graph::new(4, [(0, 1), (2, 3)]), Err(NetworkError::Disconnected));
    }

    #[test]
    fn metropolis_on_two_node_path() {
        let w = metropolis_weights(&Graph::new(2, [(0, 1)]).unwrap()).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(w.weight(i, j), 0.5);
            }
        }
        assert_close(w.beta(), 0.0, 1e-14);
    }

    #[test]
    fn metropolis_on_triangle_is_uniform_averaging() {
        let w = metropolis_weights(&Graph::ring(3).unwrap()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_close(w.weight(i, j), 1.0 / 3.0, 1e-15);
            }
        }
        // eigenvalues of J/3 are 1, 0, 0
        assert_close(w.beta(), 0.0, 1e-10);
    }

    #[test]
    fn metropolis_on_star() {
        let g = Graph::new(4, [(0, 1), (0, 2), (0, 3)]).unwrap();
        let w = metropolis_weights(&g).unwrap();
        for leaf in 1..4 {
            assert_close(w.weight(0, leaf), 0.25, 1e-15);
            assert_close(w.weight(leaf, leaf), 0.75, 1e-15);
        }
        assert_close(w.weight(0, 0), 0.25, 1e-15);
        for i in 0..4 {
            let row: f64 = (0..4).map(|j| w.weight(i, j)).sum();
            let col: f64 = (0..4).map(|j| w.weight(j, i)).sum();
            assert_close(row, 1.0, 1e-12);
            assert_close(col, 1.0, 1e-12);
        }
    }

    #[test]
    fn explicit_two_by_two() {
        let w = explicit_matrix(&[vec![2.0 / 3.0, 1.0 / 3.0], vec![1.0 / 3.0, 2.0 / 3.0]]).unwrap();
        assert_close(w.beta(), 1.0 / 3.0, 1e-14);
        assert_close(w.lambda_min(), 1.0 / 3.0, 1e-14);
    }

    #[test]
    fn explicit_single_agent_has_zero_beta() {
        let w = explicit_matrix(&[vec![1.0]]).unwrap();
        assert_eq!(w.beta(), 0.0);
        assert_eq!(w.lambda_min(), 1.0);
    }

    #[test]
    fn explicit_rank_one_averaging() {
        let w = explicit_matrix(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_close(w.beta(), 0.0, 1e-15);
    }

    #[test]
    fn explicit_rejects_invalid_matrices() {
        assert!(matches!(
            explicit_matrix(&[vec![0.6, 0.4], vec![0.3, 0.7]]),
            Err(NetworkError::NotSymmetric { .. })
        ));
        assert!(matches!(
            explicit_matrix(&[vec![0.6, 0.3], vec![0.3, 0.6]]),
            Err(NetworkError::NotStochastic { .. })
        ));
        assert!(matches!(
            explicit_matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]),
            Err(NetworkError::NotConnected { .. })
        ));
        assert!(matches!(
            explicit_matrix(&[vec![1.5, -0.5], vec![-0.5, 1.5]]),
            Err(NetworkError::NegativeWeight { .. })
        ));
    }

    #[test]
    fn spectral_of_identity_reports_unit_beta() {
        let (beta, lmin) = spectral(&DMatrix::identity(4, 4)).unwrap();
        assert_close(beta, 1.0, 1e-15);
        assert_close(lmin, 1.0, 1e-15);
    }

    #[test]
    fn json_roundtrip_revalidates() {
        let g = build_watts_strogatz(8, 2, 0.2, 3).unwrap();
        let w = metropolis_weights(&g).unwrap();
        let text = serde_json::to_string(&w).unwrap();
        let back: MixingMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back.weights(), w.weights());
        let g_text = serde_json::to_string(&g).unwrap();
        assert_eq!(serde_json::from_str::<Graph>(&g_text).unwrap(), g);
        let bad = r#"{"n":2,"weights":[[1.0,0.0],[0.0,1.0]]}"#;
        assert!(serde_json::from_str::<MixingMatrix>(bad).is_err());
    }
}
