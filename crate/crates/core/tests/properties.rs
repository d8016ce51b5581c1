mod common;

use centraprune::centrality::{
    eigenvector_centrality, rank_neurons, CentralityScores, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use centraprune::graph::{
    build_graph, graph_from_weights, similarity_from_weights, Edge, SimilarityGraph,
    DEFAULT_EPSILON,
};
use centraprune::matrix::Matrix;
use centraprune::net::{self, rebuild_with_plan, MlpModel};
use centraprune::prune::{apply_plan, make_plan, prune_count};
use centraprune::tensor_io::{Activation, LayerBundle};
use centraprune::Execution;
use proptest::prelude::*;

fn weights(d: usize, n: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-1.0f64..1.0, d * n).prop_map(move |v| Matrix::from_vec(d, n, v).unwrap())
}

fn edge_set(g: &SimilarityGraph) -> Vec<(usize, usize)> {
    g.edges().iter().map(|e| (e.i, e.j)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn thresholds_nest(w in (1usize..6, 2usize..16).prop_flat_map(|(d, n)| weights(d, n))) {
        let s = similarity_from_weights(&w, DEFAULT_EPSILON, Execution::Sequential).unwrap();
        let mut previous: Option<Vec<(usize, usize)>> = None;
        for tau in [0.0, 0.2, 0.5, 0.8] {
            let edges = edge_set(&build_graph(&s, tau).unwrap());
            if let Some(prev) = &previous {
                prop_assert!(edges.iter().all(|e| prev.contains(e)));
            }
            previous = Some(edges);
        }
    }

    #[test]
    fn graph_is_permutation_equivariant(
        (w, perm) in (1usize..6, 2usize..12).prop_flat_map(|(d, n)| {
            (weights(d, n), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
        }),
        tau in 0.0f64..0.9,
    ) {
        let g = graph_from_weights(&w, tau, DEFAULT_EPSILON, Execution::Sequential).unwrap();
        let permuted = w.select_columns(&perm);
        let gp = graph_from_weights(&permuted, tau, DEFAULT_EPSILON, Execution::Parallel).unwrap();
        // node a of the permuted graph is node perm[a] of the original
        for a in 0..perm.len() {
            for b in 0..perm.len() {
                prop_assert_eq!(gp.weight(a, b), g.weight(perm[a], perm[b]));
            }
        }
    }

    #[test]
    fn similarity_matches_pairwise_cosine(w in (1usize..8, 1usize..20).prop_flat_map(|(d, n)| weights(d, n))) {
        let s = similarity_from_weights(&w, DEFAULT_EPSILON, Execution::Parallel).unwrap();
        for i in 0..w.cols() {
            for j in 0..w.cols() {
                if i != j {
                    prop_assert!((s.get(i, j) - common::cosine_oracle(&w, i, j, DEFAULT_EPSILON)).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn rescaling_a_column_keeps_edges(
        w in (2usize..6, 2usize..10).prop_flat_map(|(d, n)| weights(d, n)),
        col in 0usize..10,
        alpha in 1.0f64..50.0,
        tau in 0.0f64..0.9,
    ) {
        let col = col % w.cols();
        prop_assume!(centraprune::matrix::l2_norm(&w.column(col)) >= 1e-3);
        let s = similarity_from_weights(&w, DEFAULT_EPSILON, Execution::Sequential).unwrap();
        // skip thresholds within 1e-3 of any entry
        prop_assume!(s.as_slice().iter().all(|v| (v - tau).abs() >= 1e-3));
        let mut scaled = w.clone();
        for r in 0..w.rows() {
            scaled[(r, col)] *= alpha;
        }
        let s2 = similarity_from_weights(&scaled, DEFAULT_EPSILON, Execution::Sequential).unwrap();
        for (a, b) in s.as_slice().iter().zip(s2.as_slice()) {
            prop_assert!((a - b).abs() < 1e-4);
        }
        prop_assert_eq!(edge_set(&build_graph(&s, tau).unwrap()), edge_set(&build_graph(&s2, tau).unwrap()));
    }

    #[test]
    fn uniform_weight_rescaling_keeps_ranking(seed in any::<u64>(), alpha in 0.1f64..10.0) {
        let mut rng = common::rng(seed);
        let g = common::random_graph(&mut rng, 12, 0.5);
        let scaled_edges: Vec<Edge> = g.edges().iter().map(|e| Edge { weight: e.weight * alpha, ..*e }).collect();
        let gs = SimilarityGraph::from_edges(12, 0.0, &scaled_edges).unwrap();
        let (Ok(a), Ok(b)) = (
            eigenvector_centrality(&g, DEFAULT_TOL, 100_000),
            eigenvector_centrality(&gs, DEFAULT_TOL, 100_000),
        ) else {
            return Err(TestCaseError::reject("degenerate spectrum"));
        };
        for (x, y) in a.scores.iter().zip(&b.scores) {
            prop_assert!((x - y).abs() < 1e-8);
        }
        // identical up to near-ties
        let ra = rank_neurons(&a);
        let rb = rank_neurons(&b);
        for (i, j) in ra.iter().zip(&rb) {
            prop_assert!(i == j || (a.scores[*i] - a.scores[*j]).abs() < 1e-8);
        }
    }

    #[test]
    fn centrality_is_permutation_equivariant(seed in any::<u64>(), perm in Just((0..10).collect::<Vec<usize>>()).prop_shuffle()) {
        let mut rng = common::rng(seed);
        let g = common::random_graph(&mut rng, 10, 0.6);
        // inverse: original node perm[a] becomes node a
        let edges: Vec<Edge> = {
            let mut inv = [0; 10];
            for (a, &p) in perm.iter().enumerate() {
                inv[p] = a;
            }
            g.edges().iter().map(|e| {
                let (i, j) = (inv[e.i], inv[e.j]);
                Edge { i: i.min(j), j: i.max(j), weight: e.weight }
            }).collect()
        };
        let gp = SimilarityGraph::from_edges(10, 0.0, &edges).unwrap();
        let (Ok(a), Ok(b)) = (
            eigenvector_centrality(&g, DEFAULT_TOL, 100_000),
            eigenvector_centrality(&gp, DEFAULT_TOL, 100_000),
        ) else {
            return Err(TestCaseError::reject("degenerate spectrum"));
        };
        for (node, &orig) in perm.iter().enumerate() {
            prop_assert!((b.scores[node] - a.scores[orig]).abs() < 1e-8);
        }
    }

    #[test]
    fn isolated_nodes_rank_first(seed in any::<u64>(), extra in 1usize..4) {
        let mut rng = common::rng(seed);
        let core = common::random_graph(&mut rng, 8, 0.7);
        let n = 8 + extra;
        let g = SimilarityGraph::from_edges(n, 0.0, &core.edges()).unwrap();
        let Ok(c) = eigenvector_centrality(&g, DEFAULT_TOL, 100_000) else {
            return Err(TestCaseError::reject("degenerate spectrum"));
        };
        let ranking = rank_neurons(&c);
        for i in 8..n {
            prop_assert_eq!(c.scores[i], 0.0);
            let pos = ranking.iter().position(|&r| r == i).unwrap();
            for (later, &node) in ranking.iter().enumerate() {
                if c.scores[node] > 0.0 {
                    prop_assert!(pos < later);
                }
            }
        }
    }

    #[test]
    fn pruned_sets_nest(scores in prop::collection::vec(0.0f64..1.0, 1..60), p1 in 0.01f64..0.99, p2 in 0.01f64..0.99) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let c = CentralityScores { scores, lambda: 1.0, iterations: 0, converged: true };
        let a = make_plan(&c, lo).unwrap();
        let b = make_plan(&c, hi).unwrap();
        prop_assert!(a.pruned.iter().all(|i| b.pruned.contains(i)));
        prop_assert_eq!(a.k, prune_count(lo, c.n()));
        let max_pruned = a.pruned.iter().map(|&i| c.scores[i]).fold(f64::NEG_INFINITY, f64::max);
        let min_kept = a.kept.iter().map(|&i| c.scores[i]).fold(f64::INFINITY, f64::min);
        prop_assert!(max_pruned <= min_kept);
    }

    #[test]
    fn pruned_preactivations_are_restrictions(
        (w, x) in (1usize..10, 1usize..12, 1usize..5).prop_flat_map(|(d, n, b)| (weights(d, n), weights(b, d))),
        p in 0.05f64..0.95,
    ) {
        let n = w.cols();
        let layer = LayerBundle::new("fc", Activation::Relu, w, (0..n).map(|j| j as f64 * 0.1).collect()).unwrap();
        let c = CentralityScores { scores: (0..n).map(|j| ((j * 37) % 11) as f64).collect(), lambda: 1.0, iterations: 0, converged: true };
        let plan = make_plan(&c, p).unwrap();
        let pruned = apply_plan(&layer, &plan).unwrap().into_layer("fc", Activation::Relu);
        let full = net::pre_activation(&layer, &x);
        let cut = net::pre_activation(&pruned, &x);
        for r in 0..x.rows() {
            for (m, &j) in plan.kept.iter().enumerate() {
                prop_assert_eq!(cut[(r, m)].to_bits(), full[(r, j)].to_bits());
            }
        }
    }
}

#[test]
fn identical_neurons_share_centrality_and_survive() {
    // cluster of 4 identical columns + 4 mutually orthogonal-ish others
    let base = [0.3, -0.7, 0.2, 0.5, 0.1, -0.4];
    let mut cols: Vec<Vec<f64>> = (0..4).map(|_| base.to_vec()).collect();
    for k in 0..4 {
        let mut v = vec![0.0; 6];
        v[k] = 1.0;
        v[5] = -0.05 * k as f64;
        cols.push(v);
    }
    let w = Matrix::from_columns(&cols);
    let g = graph_from_weights(&w, 0.5, DEFAULT_EPSILON, Execution::Sequential).unwrap();
    let c = eigenvector_centrality(&g, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    for i in 1..4 {
        assert!((c.scores[i] - c.scores[0]).abs() < 1e-8);
    }
    for p in [0.1, 0.3, 0.5] {
        let plan = make_plan(&c, p).unwrap();
        assert!(plan.k <= 8 - 4);
        assert!(
            (0..4).all(|i| plan.kept.contains(&i)),
            "p={p}: {:?}",
            plan.kept
        );
    }
}

#[test]
fn relu_activations_commute_with_slicing() {
    let mut rng = common::rng(11);
    let model = MlpModel::new(5, &[9, 6], Activation::Relu, 3, 4).unwrap();
    let x = common::random_matrix(&mut rng, 7, 5);
    let c = CentralityScores {
        scores: (0..9).map(|j| ((j * 5) % 9) as f64).collect(),
        lambda: 1.0,
        iterations: 0,
        converged: true,
    };
    let plan = make_plan(&c, 0.4).unwrap();
    let rebuilt = rebuild_with_plan(&model, "hidden0", &plan).unwrap();
    let before = model.forward_trace(&x).unwrap();
    let after = rebuilt.forward_trace(&x).unwrap();
    for r in 0..7 {
        for (m, &j) in plan.kept.iter().enumerate() {
            assert_eq!(after[0][(r, m)].to_bits(), before[0][(r, j)].to_bits());
        }
    }
}

#[test]
fn linear_hidden_logits_match_restricted_original() {
    let mut rng = common::rng(5);
    let model = MlpModel::new(4, &[8], Activation::Linear, 3, 2).unwrap();
    let x = common::random_matrix(&mut rng, 6, 4);
    let c = CentralityScores {
        scores: vec![0.4, 0.1, 0.9, 0.3, 0.8, 0.2, 0.7, 0.6],
        lambda: 1.0,
        iterations: 0,
        converged: true,
    };
    let plan = make_plan(&c, 0.5).unwrap();
    let rebuilt = rebuild_with_plan(&model, "hidden0", &plan).unwrap();
    let logits = rebuilt.logits(&x).unwrap();
    // original head applied to the original hidden activations at kept indices
    let hidden = model.forward_trace(&x).unwrap().remove(0);
    for r in 0..6 {
        for k in 0..3 {
            let mut z = 0.0;
            for &j in &plan.kept {
                z += hidden[(r, j)] * model.head.weights[(j, k)];
            }
            z += model.head.bias[k];
            assert!((logits[(r, k)] - z).abs() <= 1e-12);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5u64 {
        let mut rng = common::rng(seed);
        let model = MlpModel::new(3, &[4, 5], Activation::Relu, 3, seed).unwrap();
        let x = common::random_matrix(&mut rng, 6, 3);
        let y: Vec<usize> = (0..6).map(|i| (i + seed as usize) % 3).collect();
        let (loss, grads) = net::loss_and_gradients(&model, &x, &y).unwrap();
        assert!((loss - common::loss_oracle(&model, &x, &y)).abs() < 1e-12);
        let fd = common::finite_difference_grads(&model, |m| common::loss_oracle(m, &x, &y), 1e-5);
        for (a, b) in grads.iter().zip(&fd) {
            for (g, f) in a
                .weights
                .as_slice()
                .iter()
                .chain(&a.bias)
                .zip(b.weights.as_slice().iter().chain(&b.bias))
            {
                let rel = (g - f).abs() / g.abs().max(f.abs()).max(1e-6);
                assert!(rel <= 1e-4, "seed {seed}: analytic {g} vs numeric {f}");
            }
        }
    }
}
