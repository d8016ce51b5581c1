//! Eigenvector centrality of a similarity graph by power iteration.
//!
//! The iteration runs on `A + σI` with `σ` equal to half the largest weighted
//! degree. The shift leaves the eigenvectors of `A` unchanged but makes the
//! dominant eigenvalue strictly largest in magnitude, so bipartite components
//! (eigenvalues `±λ`) do not oscillate. Convergence is declared on the
//! relative residual `‖A c − λ c‖₂ ≤ tol·λ` of the vector that is actually
//! returned, with `λ = cᵀA c`.

use serde::{Deserialize, Serialize};

use crate::graph::SimilarityGraph;
use crate::matrix::{dot, l2_norm};
use crate::par::Execution;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 1000;

/// Negative entries down to this magnitude are rounding noise and clamp to 0.
const NEGATIVE_CLAMP: f64 = 1e-12;
/// Scores outside the dominant component below this are zeroed.
const RESIDUAL_ZERO: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralityScores {
    pub scores: Vec<f64>,
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl CentralityScores {
    pub fn n(&self) -> usize {
        self.scores.len()
    }

    /// `‖A·scores − λ·scores‖₂` against `g`.
    pub fn residual(&self, g: &SimilarityGraph) -> f64 {
        eigen_residual(g, &self.scores, self.lambda)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CentralityError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("invalid solver parameter: {0}")]
    InvalidParameter(String),
    #[error("power iteration did not converge in {} iterations", .0.iterations)]
    NotConverged(Box<CentralityScores>),
}

impl CentralityError {
    pub fn code(&self) -> &'static str {
        match self {
            CentralityError::EmptyGraph => "EmptyGraph",
            CentralityError::InvalidParameter(_) => "InvalidParameter",
            CentralityError::NotConverged(_) => "NotConverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralityConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub exec: Execution,
}

impl Default for CentralityConfig {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            exec: Execution::default(),
        }
    }
}

impl CentralityConfig {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        Self {
            tol,
            max_iter,
            ..Self::default()
        }
    }

    pub fn with_exec(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }
}

pub fn eigenvector_centrality(
    g: &SimilarityGraph,
    tol: f64,
    max_iter: usize,
) -> Result<CentralityScores, CentralityError> {
    eigenvector_centrality_with(g, &CentralityConfig::new(tol, max_iter))
}

pub fn eigenvector_centrality_with(
    g: &SimilarityGraph,
    cfg: &CentralityConfig,
) -> Result<CentralityScores, CentralityError> {
    let n = g.n();
    if n == 0 {
        return Err(CentralityError::EmptyGraph);
    }
    if !(cfg.tol.is_finite() && cfg.tol > 0.0) {
        return Err(CentralityError::InvalidParameter(format!(
            "tol must be positive, got {}",
            cfg.tol
        )));
    }
    if cfg.max_iter == 0 {
        return Err(CentralityError::InvalidParameter(
            "max_iter must be at least 1".into(),
        ));
    }
    if g.edge_count() == 0 {
        return Ok(CentralityScores {
            scores: vec![0.0; n],
            lambda: 0.0,
            iterations: 0,
            converged: true,
        });
    }

    let shift = 0.5
        * (0..n)
            .map(|i| g.neighbors(i).map(|(_, w)| w.abs()).sum::<f64>())
            .fold(0.0, f64::max);
    let labels = g.components();

    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut best: Option<(f64, CentralityScores)> = None;
    for iteration in 0..=cfg.max_iter {
        let ax = g.matvec(&x, cfg.exec);
        let candidate = clean(&x, g, &labels);
        let ac = if candidate == x {
            ax.clone()
        } else {
            g.matvec(&candidate, cfg.exec)
        };
        let lambda = dot(&candidate, &ac);
        let residual = residual_of(&ac, &candidate, lambda);
        let scores = CentralityScores {
            scores: candidate,
            lambda,
            iterations: iteration,
            converged: false,
        };
        if lambda > 0.0 && residual <= cfg.tol * lambda {
            return Ok(CentralityScores {
                converged: true,
                ..scores
            });
        }
        let relative = if lambda > 0.0 {
            residual / lambda
        } else {
            f64::INFINITY
        };
        if best.as_ref().is_none_or(|(r, _)| relative < *r) {
            best = Some((relative, scores));
        }
        if iteration == cfg.max_iter {
            break;
        }
        let mut next: Vec<f64> = ax.iter().zip(&x).map(|(a, v)| a + shift * v).collect();
        let norm = l2_norm(&next);
        if norm == 0.0 || !norm.is_finite() {
            break;
        }
        next.iter_mut().for_each(|v| *v /= norm);
        x = next;
    }
    let (_, scores) = best.expect("at least one iterate is evaluated");
    Err(CentralityError::NotConverged(Box::new(scores)))
}

/// Post-processing applied to every iterate before it is tested and returned.
fn clean(x: &[f64], g: &SimilarityGraph, labels: &[usize]) -> Vec<f64> {
    let mut c = x.to_vec();
    if c.iter().sum::<f64>() < 0.0 {
        c.iter_mut().for_each(|v| *v = -*v);
    }
    for (i, v) in c.iter_mut().enumerate() {
        if (-NEGATIVE_CLAMP..0.0).contains(v) || g.is_isolated(i) {
            *v = 0.0;
        }
    }
    let top = c
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > c[best] { i } else { best });
    let dominant = labels[top];
    for (i, v) in c.iter_mut().enumerate() {
        if labels[i] != dominant && v.abs() < RESIDUAL_ZERO {
            *v = 0.0;
        }
    }
    let norm = l2_norm(&c);
    if norm > 0.0 {
        c.iter_mut().for_each(|v| *v /= norm);
    }
    c
}

fn residual_of(ac: &[f64], c: &[f64], lambda: f64) -> f64 {
    ac.iter()
        .zip(c)
        .map(|(a, v)| (a - lambda * v).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// `‖A·c − λ·c‖₂`.
pub fn eigen_residual(g: &SimilarityGraph, c: &[f64], lambda: f64) -> f64 {
    residual_of(&g.matvec(c, Execution::Sequential), c, lambda)
}

/// Node indices ordered by ascending score; ties go to the lower index.
pub fn rank_neurons(c: &CentralityScores) -> Vec<usize> {
    rank_ascending(&c.scores)
}

/// Indices of `values` sorted ascending, ties broken by index.
pub fn rank_ascending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> SimilarityGraph {
        let edges: Vec<Edge> = edges
            .iter()
            .map(|&(i, j, weight)| Edge { i, j, weight })
            .collect();
        SimilarityGraph::from_edges(n, 0.0, &edges).unwrap()
    }

    fn run(g: &SimilarityGraph) -> CentralityScores {
        eigenvector_centrality(g, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap()
    }

    #[test]
    fn symmetric_pair() {
        let c = run(&graph(2, &[(0, 1, 1.0)]));
        assert!((c.scores[0] - H).abs() < 1e-12 && (c.scores[1] - H).abs() < 1e-12);
        assert!((c.lambda - 1.0).abs() < 1e-12);
        assert!(c.converged);
    }

    #[test]
    fn triangle() {
        let c = run(&graph(3, &[(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0)]));
        let third = 1.0 / 3f64.sqrt();
        for s in &c.scores {
            assert!((s - third).abs() < 1e-12);
        }
        assert!((c.lambda - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pair_plus_isolated_node() {
        let c = run(&graph(3, &[(0, 1, 1.0)]));
        assert!((c.scores[0] - H).abs() < 1e-10);
        assert!((c.scores[1] - H).abs() < 1e-10);
        assert_eq!(c.scores[2], 0.0);
        assert!((c.lambda - 1.0).abs() < 1e-10);
    }

    #[test]
    fn path_graph_does_not_oscillate() {
        // Bipartite: eigenvalues ±√2 and 0.
        let c = run(&graph(3, &[(0, 1, 1.0), (1, 2, 1.0)]));
        assert!(c.converged);
        assert!((c.lambda - 2f64.sqrt()).abs() < 1e-9);
        assert!((c.scores[1] - H).abs() < 1e-9);
        assert!((c.scores[0] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn empty_edge_set_is_all_zero() {
        let c = run(&graph(4, &[]));
        assert_eq!(c.scores, vec![0.0; 4]);
        assert_eq!(c.lambda, 0.0);
        assert!(c.converged);
        assert_eq!(rank_neurons(&c), vec![0, 1, 2, 3]);
    }

    #[test]
    fn empty_graph_and_bad_parameters() {
        let g = graph(0, &[]);
        assert_eq!(run_err(&g, DEFAULT_TOL, 10), "EmptyGraph");
        let g = graph(2, &[(0, 1, 1.0)]);
        assert_eq!(run_err(&g, 0.0, 10), "InvalidParameter");
        assert_eq!(run_err(&g, DEFAULT_TOL, 0), "InvalidParameter");
    }

    fn run_err(g: &SimilarityGraph, tol: f64, max_iter: usize) -> &'static str {
        eigenvector_centrality(g, tol, max_iter).unwrap_err().code()
    }

    #[test]
    fn not_converged_carries_best_scores() {
        // A star converges slowly from the uniform start; one step is not enough.
        let edges: Vec<_> = (1..6).map(|j| (0, j, 0.3 + 0.1 * j as f64)).collect();
        let g = graph(6, &edges);
        match eigenvector_centrality(&g, 1e-14, 1) {
            Err(CentralityError::NotConverged(best)) => {
                assert!(!best.converged);
                assert_eq!(best.scores.len(), 6);
                assert!((l2_norm(&best.scores) - 1.0).abs() < 1e-12);
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn residual_holds_on_returned_vector() {
        let g = graph(
            5,
            &[
                (0, 1, 0.9),
                (1, 2, 0.4),
                (2, 3, 0.7),
                (0, 2, 0.3),
                (3, 4, 0.2),
            ],
        );
        let c = run(&g);
        assert!(c.residual(&g) <= DEFAULT_TOL * c.lambda);
        assert!((l2_norm(&c.scores) - 1.0).abs() < 1e-10);
        assert!(c.scores.iter().all(|&s| s >= 0.0));
    }

    #[test]
    fn disconnected_minor_component_is_zeroed() {
        let g = graph(5, &[(0, 1, 0.9), (0, 2, 0.9), (1, 2, 0.9), (3, 4, 0.3)]);
        let c = run(&g);
        assert_eq!(&c.scores[3..], &[0.0, 0.0]);
        assert!(c.scores[..3].iter().all(|&s| s > 0.5));
    }

    #[test]
    fn ranking_examples() {
        assert_eq!(rank_ascending(&[0.1, 0.9, 0.5]), vec![0, 2, 1]);
        assert_eq!(rank_ascending(&[0.5, 0.5, 0.5]), vec![0, 1, 2]);
        assert_eq!(rank_ascending(&[0.0]), vec![0]);
    }

    #[test]
    fn sequential_and_parallel_agree_bitwise() {
        let edges: Vec<_> = (0..40)
            .flat_map(|i| (i + 1..40).map(move |j| (i, j)))
            .filter(|(i, j)| (i * 31 + j * 17) % 5 < 2)
            .map(|(i, j)| (i, j, ((i * 7 + j * 13) % 10) as f64 / 10.0 + 0.05))
            .collect();
        let g = graph(40, &edges);
        let seq = eigenvector_centrality_with(
            &g,
            &CentralityConfig::default().with_exec(Execution::Sequential),
        );
        let par = eigenvector_centrality_with(
            &g,
            &CentralityConfig::default().with_exec(Execution::Parallel),
        );
        assert_eq!(seq, par);
    }
}
