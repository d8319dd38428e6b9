//! Undirected communication graphs and their mixing matrices.
//!
//! A valid mixing matrix is symmetric, doubly stochastic, positive on
//! graph edges and zero off them, has the all-ones vector as the unique
//! top eigendirection (`λ₁ = 1` simple), and `λₙ > −1`. The cached
//! spectrum drives step-size bounds and consensus-contraction estimates.

use std::collections::{BTreeSet, VecDeque};

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::symmetric_eigenvalues;

/// Tolerance for row sums of a doubly stochastic matrix.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Tolerance guarding the simplicity of `λ₁` and the `λₙ > −1` bound.
pub const SPECTRAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("node count must be positive")]
    EmptyGraph,
    #[error("edge ({0}, {1}) is a self-loop")]
    SelfLoop(usize, usize),
    #[error("edge ({0}, {1}) references a node out of range (n = {2})")]
    NodeOutOfRange(usize, usize, usize),
    #[error("graph is disconnected: components {0:?}")]
    Disconnected(Vec<Vec<usize>>),
    #[error("matrix is {0}×{1} but the graph has {2} nodes")]
    DimensionMismatch(usize, usize, usize),
    #[error("asymmetric entries at ({0}, {1}): {2} vs {3}")]
    Asymmetric(usize, usize, f64, f64),
    #[error("entry ({0}, {1}) = {2} must be zero: nodes are not adjacent")]
    NonzeroOffEdge(usize, usize, f64),
    #[error("entry ({0}, {1}) = {2} must be positive on an edge")]
    NonpositiveOnEdge(usize, usize, f64),
    #[error("row {0} sums to {1}, expected 1")]
    RowSumNotOne(usize, f64),
    #[error("largest eigenvalue {0} is not 1")]
    TopEigenvalueNotOne(f64),
    #[error("λ₁ = 1 is not simple: λ₂ = {0}; null space of I−W exceeds span{{1}}")]
    TopEigenvalueNotSimple(f64),
    #[error("smallest eigenvalue {0} violates λₙ > −1")]
    BottomEigenvalueTooSmall(f64),
    #[error("matrix entry ({0}, {1}) is not finite")]
    NonFiniteEntry(usize, usize),
}

/// An undirected graph on nodes `0..n` with a deduplicated edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Build a graph, normalizing edge orientation and rejecting
    /// self-loops, out-of-range endpoints, and disconnected topologies.
    pub fn new(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, NetworkError> {
        if node_count == 0 {
            return Err(NetworkError::EmptyGraph);
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i == j {
                return Err(NetworkError::SelfLoop(i, j));
            }
            if i >= node_count || j >= node_count {
                return Err(NetworkError::NodeOutOfRange(i, j, node_count));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let graph = Graph {
            node_count,
            edges: set,
        };
        let components = graph.components();
        if components.len() > 1 {
            return Err(NetworkError::Disconnected(components));
        }
        Ok(graph)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == i || b == i)
            .count()
    }

    /// Connected components by breadth-first search, each sorted.
    fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.node_count];
        let mut components = Vec::new();
        for start in 0..self.node_count {
            if seen[start] {
                continue;
            }
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            let mut comp = vec![start];
            while let Some(u) = queue.pop_front() {
                for &(a, b) in &self.edges {
                    let v = if a == u {
                        b
                    } else if b == u {
                        a
                    } else {
                        continue;
                    };
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            components.push(comp);
        }
        components
    }

    /// Path 0—1—…—(n−1).
    pub fn path(n: usize) -> Result<Self, NetworkError> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::new(n, &edges)
    }

    /// Cycle on `n ≥ 3` nodes.
    pub fn cycle(n: usize) -> Result<Self, NetworkError> {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n >= 3 {
            edges.push((n - 1, 0));
        }
        Graph::new(n, &edges)
    }

    /// Complete graph.
    pub fn complete(n: usize) -> Result<Self, NetworkError> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push((i, j));
            }
        }
        Graph::new(n, &edges)
    }

    /// Star with node 0 as hub.
    pub fn star(n: usize) -> Result<Self, NetworkError> {
        let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
        Graph::new(n, &edges)
    }
}

/// A validated mixing matrix with cached spectral data.
#[derive(Debug, Clone)]
pub struct MixingSpec {
    weights: Array2<f64>,
    graph: Graph,
    /// Eigenvalues in nonincreasing order; `spectrum[0] == λ₁ ≈ 1`.
    spectrum: Vec<f64>,
    zeta: f64,
    lambda_min: f64,
}

impl MixingSpec {
    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Second largest magnitude eigenvalue; 0 for a single node.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Smallest eigenvalue `λₙ(W)`.
    pub fn lambda_min(&self) -> f64 {
        self.lambda_min
    }

    /// Strict positivity of `λₙ` with the spectral tolerance as guard;
    /// eigenvalues within tolerance of zero do not count as positive.
    pub fn has_positive_lambda_min(&self) -> bool {
        self.lambda_min > SPECTRAL_TOL
    }

    /// Spectral norm of `W^k − (1/n)𝟙𝟙ᵀ`.
    ///
    /// For a validated symmetric doubly stochastic matrix this equals the
    /// largest magnitude among the non-principal eigenvalues raised to the
    /// k-th power, which is `ζᵏ` for `k ≥ 1` and 1 for `k = 0` (unless
    /// `n = 1`, where the deviation is identically zero).
    pub fn power_deviation(&self, k: u32) -> f64 {
        self.spectrum[1..]
            .iter()
            .map(|lam| lam.abs().powi(k as i32))
            .fold(0.0, f64::max)
    }

    /// Step-size bounds from the descent analysis: the smooth / convex-
    /// regularizer bound `(1+λₙ)/L_f`, and the nonconvex-regularizer bound
    /// `λₙ/L_f` which exists only when `λₙ > 0`.
    pub fn safe_step_bounds(&self, lipschitz: f64) -> (f64, Option<f64>) {
        assert!(lipschitz > 0.0, "Lipschitz constant must be positive");
        let dgd = (1.0 + self.lambda_min) / lipschitz;
        let prox_nonconvex = self
            .has_positive_lambda_min()
            .then(|| self.lambda_min / lipschitz);
        (dgd, prox_nonconvex)
    }
}

/// Metropolis weights: `W_ij = 1/(1 + max(deg_i, deg_j))` on edges, with
/// the diagonal absorbing the rest of each row.
pub fn build_metropolis(graph: &Graph) -> Result<MixingSpec, NetworkError> {
    let n = graph.node_count();
    let degrees: Vec<usize> = (0..n).map(|i| graph.degree(i)).collect();
    let mut w = Array2::<f64>::zeros((n, n));
    for (i, j) in graph.edges() {
        let weight = 1.0 / (1.0 + degrees[i].max(degrees[j]) as f64);
        w[[i, j]] = weight;
        w[[j, i]] = weight;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[[i, j]]).sum();
        w[[i, i]] = 1.0 - off;
    }
    from_matrix(w.view(), graph.clone())
}

/// Validate a raw matrix against every mixing-matrix requirement and cache
/// its spectrum. Rejection names the violated clause.
pub fn from_matrix(entries: ArrayView2<'_, f64>, graph: Graph) -> Result<MixingSpec, NetworkError> {
    let n = graph.node_count();
    if entries.nrows() != n || entries.ncols() != n {
        return Err(NetworkError::DimensionMismatch(
            entries.nrows(),
            entries.ncols(),
            n,
        ));
    }
    for i in 0..n {
        for j in 0..n {
            if !entries[[i, j]].is_finite() {
                return Err(NetworkError::NonFiniteEntry(i, j));
            }
        }
    }
    // Symmetry must hold bit-exactly; validated inputs come from explicit
    // constructions or parsed text where equal entries are equal floats.
    for i in 0..n {
        for j in (i + 1)..n {
            if entries[[i, j]] != entries[[j, i]] {
                return Err(NetworkError::Asymmetric(
                    i,
                    j,
                    entries[[i, j]],
                    entries[[j, i]],
                ));
            }
        }
    }
    // Sparsity pattern: zero off edges, strictly positive on edges.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = entries[[i, j]];
            if graph.has_edge(i, j) {
                if v <= 0.0 {
                    return Err(NetworkError::NonpositiveOnEdge(i, j, v));
                }
            } else if v != 0.0 {
                return Err(NetworkError::NonzeroOffEdge(i, j, v));
            }
        }
    }
    for i in 0..n {
        let sum: f64 = entries.row(i).sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(NetworkError::RowSumNotOne(i, sum));
        }
    }

    let spectrum = symmetric_eigenvalues(entries);
    let lambda_top = spectrum[0];
    if (lambda_top - 1.0).abs() > SPECTRAL_TOL {
        return Err(NetworkError::TopEigenvalueNotOne(lambda_top));
    }
    if n >= 2 && lambda_top - spectrum[1] <= SPECTRAL_TOL {
        return Err(NetworkError::TopEigenvalueNotSimple(spectrum[1]));
    }
    let lambda_min = *spectrum.last().expect("nonempty spectrum");
    if n >= 2 && lambda_min <= -1.0 + SPECTRAL_TOL {
        return Err(NetworkError::BottomEigenvalueTooSmall(lambda_min));
    }

    let zeta = if n == 1 {
        0.0
    } else {
        spectrum[1].abs().max(lambda_min.abs())
    };

    Ok(MixingSpec {
        weights: entries.to_owned(),
        graph,
        spectrum,
        zeta,
        lambda_min,
    })
}

/// Network description as it appears in run configurations: either an
/// explicit edge list (Metropolis weights are derived) or a raw matrix
/// (the graph is inferred from the off-diagonal sparsity pattern).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NetworkSpec {
    Edges {
        nodes: usize,
        edges: Vec<(usize, usize)>,
    },
    Matrix {
        matrix: Vec<Vec<f64>>,
    },
}

impl NetworkSpec {
    pub fn build(&self) -> Result<MixingSpec, NetworkError> {
        match self {
            NetworkSpec::Edges { nodes, edges } => {
                let graph = Graph::new(*nodes, edges)?;
                build_metropolis(&graph)
            }
            NetworkSpec::Matrix { matrix } => {
                let n = matrix.len();
                let mut w = Array2::<f64>::zeros((n, n));
                for (i, row) in matrix.iter().enumerate() {
                    if row.len() != n {
                        return Err(NetworkError::DimensionMismatch(n, row.len(), n));
                    }
                    for (j, &v) in row.iter().enumerate() {
                        w[[i, j]] = v;
                    }
                }
                let mut edges = Vec::new();
                for i in 0..n {
                    for j in (i + 1)..n {
                        if w[[i, j]] != 0.0 {
                            edges.push((i, j));
                        }
                    }
                }
                let graph = Graph::new(n, &edges)?;
                from_matrix(w.view(), graph)
            }
        }
    }
}

/// The explicit 3-agent mixing matrix used by the toy experiments:
/// rows `[1/2, 0, 1/2]`, `[0, 1/2, 1/2]`, `[1/2, 1/2, 0]`.
pub fn three_agent_mixing() -> MixingSpec {
    let w = ndarray::array![[0.5, 0.0, 0.5], [0.0, 0.5, 0.5], [0.5, 0.5, 0.0]];
    let graph = Graph::new(3, &[(0, 2), (1, 2)]).expect("valid graph");
    from_matrix(w.view(), graph).expect("valid mixing matrix")
}

/// Half-step lazy variant `(I + W)/2` of a Metropolis matrix; always
/// positive definite, used when the analysis requires `λₙ > 0`.
pub fn build_lazy_metropolis(graph: &Graph) -> Result<MixingSpec, NetworkError> {
    let base = build_metropolis(graph)?;
    let n = graph.node_count();
    let mut w = base.weights.clone();
    for i in 0..n {
        for j in 0..n {
            let identity = if i == j { 1.0 } else { 0.0 };
            w[[i, j]] = (identity + w[[i, j]]) / 2.0;
        }
    }
    from_matrix(w.view(), graph.clone())
}
