//! Neuron similarity graph.
//!
//! Each neuron (column of a dense layer's weight matrix) is normalised, all
//! pairwise cosine similarities are computed, and pairs above a threshold `tau`
//! become weighted undirected edges. Adjacency is kept in CSR form with both
//! directions stored.

use serde::Serialize;

use crate::matrix::{dot, l2_norm, Matrix};
use crate::par::{self, Execution};

pub const DEFAULT_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("weight matrix contains a non-finite value at ({row}, {col})")]
    NonFiniteInput { row: usize, col: usize },
    #[error("epsilon must be a finite positive number, got {0}")]
    InvalidEpsilon(f64),
    #[error("threshold must lie in [0, 1), got {0}")]
    InvalidThreshold(f64),
}

impl GraphError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::NonFiniteInput { .. } => "NonFiniteInput",
            GraphError::InvalidEpsilon(_) => "InvalidEpsilon",
            GraphError::InvalidThreshold(_) => "InvalidThreshold",
        }
    }
}

/// Scales every column `w_j` to `w_j / (‖w_j‖₂ + epsilon)`.
pub fn normalize_columns(w: &Matrix, epsilon: f64) -> Result<Matrix, GraphError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(GraphError::InvalidEpsilon(epsilon));
    }
    if let Some(pos) = w.as_slice().iter().position(|v| !v.is_finite()) {
        return Err(GraphError::NonFiniteInput {
            row: pos / w.cols(),
            col: pos % w.cols(),
        });
    }
    let scale: Vec<f64> = (0..w.cols())
        .map(|j| 1.0 / (l2_norm(&w.column(j)) + epsilon))
        .collect();
    Ok(Matrix::from_fn(w.rows(), w.cols(), |i, j| {
        w[(i, j)] * scale[j]
    }))
}

/// Dense symmetric cosine-similarity matrix over `n` neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    n: usize,
    values: Vec<f64>,
    epsilon: Option<f64>,
}

impl SimilarityMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Row-major n×n buffer.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// The normalisation constant, when the matrix was built from raw weights.
    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    /// Wraps an explicit symmetric matrix, e.g. a hand-built fixture.
    pub fn from_dense(n: usize, values: Vec<f64>) -> Option<Self> {
        if values.len() != n * n {
            return None;
        }
        for i in 0..n {
            for j in 0..i {
                if values[i * n + j] != values[j * n + i] {
                    return None;
                }
            }
        }
        Some(Self {
            n,
            values,
            epsilon: None,
        })
    }
}

/// `ŴᵀŴ` over the columns of an already normalised matrix.
///
/// Only the upper triangle is computed; each pair's dot product runs over the
/// input dimension in ascending order, so the result does not depend on the
/// execution policy. Off-diagonal entries are clamped to [-1, 1]. The
/// diagonal is 1 for nonzero neurons and 0 for zero neurons.
pub fn similarity_matrix(w_hat: &Matrix, exec: Execution) -> SimilarityMatrix {
    let n = w_hat.cols();
    let cols = w_hat.transpose();
    let upper: Vec<Vec<f64>> = par::map_indices(n, exec, |i| {
        let ci = cols.row(i);
        (i + 1..n)
            .map(|j| dot(ci, cols.row(j)).clamp(-1.0, 1.0))
            .collect()
    });
    let mut values = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        values[i * n + i] = if cols.row(i).iter().any(|&v| v != 0.0) {
            1.0
        } else {
            0.0
        };
        for (off, &s) in row.iter().enumerate() {
            let j = i + 1 + off;
            values[i * n + j] = s;
            values[j * n + i] = s;
        }
    }
    SimilarityMatrix {
        n,
        values,
        epsilon: None,
    }
}

/// Normalises `w` and computes its similarity matrix in one step.
pub fn similarity_from_weights(
    w: &Matrix,
    epsilon: f64,
    exec: Execution,
) -> Result<SimilarityMatrix, GraphError> {
    let w_hat = normalize_columns(w, epsilon)?;
    let mut s = similarity_matrix(&w_hat, exec);
    s.epsilon = Some(epsilon);
    Ok(s)
}

/// Weighted undirected graph over neurons with symmetric CSR adjacency and
/// an empty diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    tau: f64,
    epsilon: Option<f64>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<f64>,
}

/// One undirected edge with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

impl SimilarityGraph {
    /// Builds a graph from an explicit undirected edge list. Duplicate or
    /// self edges are rejected with `None`.
    pub fn from_edges(n: usize, tau: f64, edges: &[Edge]) -> Option<Self> {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for e in edges {
            if e.i == e.j || e.i >= n || e.j >= n {
                return None;
            }
            rows[e.i].push((e.j, e.weight));
            rows[e.j].push((e.i, e.weight));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut weights = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return None;
            }
            for (j, w) in row {
                col_idx.push(j);
                weights.push(w);
            }
            row_ptr.push(col_idx.len());
        }
        Some(Self {
            n,
            tau,
            epsilon: None,
            row_ptr,
            col_idx,
            weights,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.col_idx.len() / 2
    }

    /// `(neighbour, weight)` pairs of node `i`, ascending by neighbour.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    pub fn is_isolated(&self, i: usize) -> bool {
        self.degree(i) == 0
    }

    /// Weight of edge (i, j), or 0 when absent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(pos) => self.weights[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Undirected edges with `i < j`, sorted lexicographically.
    pub fn edges(&self) -> Vec<Edge> {
        (0..self.n)
            .flat_map(|i| {
                self.neighbors(i)
                    .filter(move |&(j, _)| j > i)
                    .map(move |(j, weight)| Edge { i, j, weight })
            })
            .collect()
    }

    /// `A·x`, each row summed in ascending neighbour order.
    pub fn matvec(&self, x: &[f64], exec: Execution) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        par::map_indices(self.n, exec, |i| {
            self.neighbors(i).fold(0.0, |acc, (j, w)| acc + w * x[j])
        })
    }

    /// Dense row-major copy of the adjacency matrix.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for (j, w) in self.neighbors(i) {
                out[i * self.n + j] = w;
            }
        }
        out
    }

    /// Connected-component label per node; labels are assigned in order of
    /// each component's smallest node.
    pub fn components(&self) -> Vec<usize> {
        let mut label = vec![usize::MAX; self.n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for (v, _) in self.neighbors(u) {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }
}

/// Keeps every off-diagonal pair with `s[i][j] > tau` as an edge of weight
/// `s[i][j]`.
pub fn build_graph(s: &SimilarityMatrix, tau: f64) -> Result<SimilarityGraph, GraphError> {
    if !(0.0..1.0).contains(&tau) {
        return Err(GraphError::InvalidThreshold(tau));
    }
    let n = s.n;
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut col_idx = Vec::new();
    let mut weights = Vec::new();
    row_ptr.push(0);
    for i in 0..n {
        for j in 0..n {
            let v = s.get(i, j);
            if i != j && v > tau {
                col_idx.push(j);
                weights.push(v);
            }
        }
        row_ptr.push(col_idx.len());
    }
    Ok(SimilarityGraph {
        n,
        tau,
        epsilon: s.epsilon,
        row_ptr,
        col_idx,
        weights,
    })
}

/// Full graph construction from a raw weight matrix.
pub fn graph_from_weights(
    w: &Matrix,
    tau: f64,
    epsilon: f64,
    exec: Execution,
) -> Result<SimilarityGraph, GraphError> {
    if !(0.0..1.0).contains(&tau) {
        return Err(GraphError::InvalidThreshold(tau));
    }
    build_graph(&similarity_from_weights(w, epsilon, exec)?, tau)
}
