//! Independent oracles shared by the integration and acceptance tests. None of
//! these go through the library's solver or product paths.

#![allow(dead_code)]

use centraprune::graph::{Edge, SimilarityGraph};
use centraprune::matrix::Matrix;
use centraprune::net::{LayerGrad, MlpModel};
use centraprune::tensor_io::{Activation, LayerBundle};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Cosine of columns i and j with the epsilon-padded norms, straight from the
/// definition.
pub fn cosine_oracle(w: &Matrix, i: usize, j: usize, eps: f64) -> f64 {
    let (mut dot, mut ni, mut nj) = (0.0, 0.0, 0.0);
    for r in 0..w.rows() {
        dot += w[(r, i)] * w[(r, j)];
        ni += w[(r, i)] * w[(r, i)];
        nj += w[(r, j)] * w[(r, j)];
    }
    dot / ((ni.sqrt() + eps) * (nj.sqrt() + eps))
}

/// Dominant eigenpair of a dense symmetric matrix via a full
/// eigendecomposition, sign-aligned so the vector sums to a nonnegative value.
pub fn dense_dominant(n: usize, a: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let m = DMatrix::from_row_slice(n, n, a);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let top = order[0];
    let mut v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    if v.iter().sum::<f64>() < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    let mut values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    values.truncate(n);
    (eig.eigenvalues[top], v, values)
}

/// Random undirected graph with the given edge density and weights in (0, 1].
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, density: f64) -> SimilarityGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < density {
                let weight = 1.0 - rng.random::<f64>(); // (0, 1]
                edges.push(Edge { i, j, weight });
            }
        }
    }
    SimilarityGraph::from_edges(n, 0.0, &edges).unwrap()
}

fn layer_mut(m: &mut MlpModel, l: usize) -> &mut LayerBundle {
    if l < m.layers.len() {
        &mut m.layers[l]
    } else {
        &mut m.head
    }
}

/// Mean cross-entropy computed with plain loops, independent of the
/// library's forward pass.
pub fn loss_oracle(model: &MlpModel, x: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let mut a: Vec<f64> = x.row(r).to_vec();
        for l in model.layers.iter().chain(std::iter::once(&model.head)) {
            let mut z = l.bias.clone();
            for (j, zj) in z.iter_mut().enumerate() {
                for (i, ai) in a.iter().enumerate() {
                    *zj += ai * l.weights[(i, j)];
                }
            }
            if l.activation == Activation::Relu {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + a.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - a[label];
    }
    total / labels.len() as f64
}

/// Central-difference gradient of `loss` with respect to every parameter, in
/// the same layout as the analytic gradients.
pub fn finite_difference_grads(
    model: &MlpModel,
    loss: impl Fn(&MlpModel) -> f64,
    step: f64,
) -> Vec<LayerGrad> {
    let n_layers = model.layers.len() + 1;
    let mut out = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (d, n) = layer_mut(&mut model.clone(), l).weights.shape();
        let probe = |edit: &dyn Fn(&mut LayerBundle, f64)| {
            let mut plus = model.clone();
            edit(layer_mut(&mut plus, l), step);
            let mut minus = model.clone();
            edit(layer_mut(&mut minus, l), -step);
            (loss(&plus) - loss(&minus)) / (2.0 * step)
        };
        let gw = Matrix::from_fn(d, n, |i, j| probe(&|layer, h| layer.weights[(i, j)] += h));
        let gb = (0..n)
            .map(|j| probe(&|layer, h| layer.bias[j] += h))
            .collect();
        out.push(LayerGrad {
            weights: gw,
            bias: gb,
        });
    }
    out
}
