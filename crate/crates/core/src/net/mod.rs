//! Minimal dense feed-forward classifier: hidden layers with ReLU or linear
//! activations followed by a softmax head, trained with plain mini-batch SGD
//! on mean cross-entropy.

mod data;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use data::{blobs, read_dataset, rings, write_dataset, Dataset, SyntheticTask};

use crate::matrix::Matrix;
use crate::prune::{apply_plan, slice_downstream, PruneError, PrunePlan};
use crate::tensor_io::{self, Activation, LayerBundle, TensorIoError};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite at epoch {epoch}, batch {batch} (loss {loss})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("no hidden layer named `{0}`")]
    UnknownLayer(String),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Io(#[from] TensorIoError),
}

impl NetError {
    pub fn code(&self) -> &'static str {
        match self {
            NetError::ShapeMismatch(_) => "ShapeMismatch",
            NetError::EmptyDataset => "EmptyDataset",
            NetError::InvalidDataset(_) => "InvalidDataset",
            NetError::InvalidModel(_) => "InvalidModel",
            NetError::InvalidConfig(_) => "InvalidConfig",
            NetError::NonFiniteLoss { .. } => "NonFiniteLoss",
            NetError::UnknownLayer(_) => "UnknownLayer",
            NetError::Prune(e) => e.code(),
            NetError::Io(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<LayerBundle>,
    pub head: LayerBundle,
    pub rng_seed: u64,
}

/// Per-layer parameter gradients, same order as [`MlpModel::layer_iter`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

fn glorot_layer(
    name: String,
    activation: Activation,
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> LayerBundle {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let w = Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..=limit));
    LayerBundle::new(name, activation, w, vec![0.0; fan_out]).expect("sized above")
}

impl MlpModel {
    /// Fresh model with Glorot-uniform weights and zero biases. Hidden layers
    /// are named `hidden0`, `hidden1`, ...; the head is `head`.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self, NetError> {
        if activation == Activation::Softmax {
            return Err(NetError::InvalidModel(
                "hidden layers cannot use softmax".into(),
            ));
        }
        if input_dim == 0 || num_classes == 0 || hidden.contains(&0) {
            return Err(NetError::InvalidModel(
                "all dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(hidden.len());
        for (i, &width) in hidden.iter().enumerate() {
            layers.push(glorot_layer(
                format!("hidden{i}"),
                activation,
                fan_in,
                width,
                &mut rng,
            ));
            fan_in = width;
        }
        let head = glorot_layer(
            "head".into(),
            Activation::Softmax,
            fan_in,
            num_classes,
            &mut rng,
        );
        Self::from_parts(layers, head, seed)
    }

    /// Assembles a model, checking the dimension chain and activations.
    pub fn from_parts(
        layers: Vec<LayerBundle>,
        head: LayerBundle,
        rng_seed: u64,
    ) -> Result<Self, NetError> {
        if head.activation != Activation::Softmax {
            return Err(NetError::InvalidModel("head must use softmax".into()));
        }
        let mut names = std::collections::HashSet::new();
        for l in layers.iter().chain(std::iter::once(&head)) {
            if !names.insert(l.name.as_str()) {
                return Err(NetError::InvalidModel(format!(
                    "duplicate layer name `{}`",
                    l.name
                )));
            }
        }
        for l in &layers {
            if l.activation == Activation::Softmax {
                return Err(NetError::InvalidModel(format!(
                    "hidden layer `{}` cannot use softmax",
                    l.name
                )));
            }
        }
        for pair in layers
            .iter()
            .chain(std::iter::once(&head))
            .collect::<Vec<_>>()
            .windows(2)
        {
            if pair[0].n() != pair[1].d() {
                return Err(NetError::InvalidModel(format!(
                    "`{}` emits {} values but `{}` expects {}",
                    pair[0].name,
                    pair[0].n(),
                    pair[1].name,
                    pair[1].d()
                )));
            }
        }
        Ok(Self {
            layers,
            head,
            rng_seed,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().unwrap_or(&self.head).d()
    }

    pub fn num_classes(&self) -> usize {
        self.head.n()
    }

    /// Hidden layers then the head.
    pub fn layer_iter(&self) -> impl Iterator<Item = &LayerBundle> {
        self.layers.iter().chain(std::iter::once(&self.head))
    }

    fn layer_iter_mut(&mut self) -> impl Iterator<Item = &mut LayerBundle> {
        self.layers
            .iter_mut()
            .chain(std::iter::once(&mut self.head))
    }

    pub fn param_count(&self) -> usize {
        self.layer_iter().map(LayerBundle::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layer_iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn layer(&self, name: &str) -> Option<&LayerBundle> {
        self.layer_iter().find(|l| l.name == name)
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NetError> {
        if x.cols() != self.input_dim() && x.rows() > 0 {
            return Err(NetError::ShapeMismatch(format!(
                "model expects {} features, batch has {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    /// Activations after every hidden layer, then the head logits.
    pub fn forward_trace(&self, x: &Matrix) -> Result<Vec<Matrix>, NetError> {
        self.check_input(x)?;
        if x.rows() == 0 {
            return Ok(self.layer_iter().map(|l| Matrix::zeros(0, l.n())).collect());
        }
        let mut trace = Vec::with_capacity(self.layers.len() + 1);
        let mut current = x.clone();
        for l in &self.layers {
            let mut z = pre_activation(l, &current);
            activate(l.activation, &mut z);
            trace.push(z.clone());
            current = z;
        }
        trace.push(pre_activation(&self.head, &current));
        Ok(trace)
    }

    /// Head logits (pre-softmax).
    pub fn logits(&self, x: &Matrix) -> Result<Matrix, NetError> {
        Ok(self
            .forward_trace(x)?
            .pop()
            .expect("head is always present"))
    }

    /// Class probabilities, one row per input row.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix, NetError> {
        let mut z = self.logits(x)?;
        for r in 0..z.rows() {
            softmax_in_place(z.row_mut(r));
        }
        Ok(z)
    }
}

/// `x·W + b` for a batch `x`; entry (r, j) is the ascending-order sum over the
/// input dimension plus `b[j]`.
pub fn pre_activation(layer: &LayerBundle, x: &Matrix) -> Matrix {
    let mut z = x.matmul(&layer.weights);
    for r in 0..z.rows() {
        for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v += b;
        }
    }
    z
}

fn activate(act: Activation, z: &mut Matrix) {
    match act {
        Activation::Relu => z.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Linear => {}
        Activation::Softmax => {
            for r in 0..z.rows() {
                softmax_in_place(z.row_mut(r));
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn check_labels(model: &MlpModel, x: &Matrix, labels: &[usize]) -> Result<(), NetError> {
    if x.rows() != labels.len() {
        return Err(NetError::ShapeMismatch(format!(
            "{} rows but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= model.num_classes()) {
        return Err(NetError::ShapeMismatch(format!(
            "label {bad} but the head has {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

/// Mean cross-entropy of the batch.
pub fn loss(model: &MlpModel, x: &Matrix, labels: &[usize]) -> Result<f64, NetError> {
    check_labels(model, x, labels)?;
    if labels.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let logits = model.logits(x)?;
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &c)| log_sum_exp(logits.row(r)) - logits[(r, c)])
        .sum();
    Ok(total / labels.len() as f64)
}

/// Mean cross-entropy of the batch and its gradient with respect to every
/// parameter, by backpropagation.
pub fn loss_and_gradients(
    model: &MlpModel,
    x: &Matrix,
    labels: &[usize],
) -> Result<(f64, Vec<LayerGrad>), NetError> {
    check_labels(model, x, labels)?;
    if labels.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let trace = model.forward_trace(x)?;
    let batch = labels.len() as f64;
    let logits = trace.last().expect("head is always present");

    let mut loss = 0.0;
    let mut delta = logits.clone();
    for (r, &c) in labels.iter().enumerate() {
        loss += log_sum_exp(logits.row(r)) - logits[(r, c)];
        let row = delta.row_mut(r);
        softmax_in_place(row);
        row[c] -= 1.0;
        row.iter_mut().for_each(|v| *v /= batch);
    }
    loss /= batch;

    let layers: Vec<&LayerBundle> = model.layer_iter().collect();
    let mut grads = Vec::with_capacity(layers.len());
    for idx in (0..layers.len()).rev() {
        let input = if idx == 0 { x } else { &trace[idx - 1] };
        let weights = input.t_matmul(&delta);
        let bias = (0..delta.cols())
            .map(|j| (0..delta.rows()).map(|r| delta[(r, j)]).sum())
            .collect();
        grads.push(LayerGrad { weights, bias });
        if idx > 0 {
            let mut upstream = delta.matmul_t(&layers[idx].weights);
            if layers[idx - 1].activation == Activation::Relu {
                for (g, &a) in upstream.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = upstream;
        }
    }
    grads.reverse();
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if self.batch_size == 0 {
            return Err(NetError::InvalidConfig(
                "batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(NetError::InvalidConfig(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    /// Full-dataset training loss after each epoch.
    pub loss_history: Vec<f64>,
}

/// Mini-batch SGD. Each epoch visits the rows in a fresh permutation drawn
/// from a generator seeded by `cfg.rng_seed`.
pub fn train(
    model: &MlpModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    if data.features() != model.input_dim() {
        return Err(NetError::ShapeMismatch(format!(
            "model expects {} features, dataset has {}",
            model.input_dim(),
            data.features()
        )));
    }
    if data.num_classes() != model.num_classes() {
        return Err(NetError::ShapeMismatch(format!(
            "model has {} classes, dataset has {}",
            model.num_classes(),
            data.num_classes()
        )));
    }
    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = data.x().select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.y()[i]).collect();
            let (batch_loss, grads) = loss_and_gradients(&model, &x, &y)?;
            if !batch_loss.is_finite() {
                return Err(NetError::NonFiniteLoss {
                    epoch,
                    batch,
                    loss: batch_loss,
                });
            }
            for (layer, grad) in model.layer_iter_mut().zip(&grads) {
                for (w, g) in layer
                    .weights
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grad.weights.as_slice())
                {
                    *w -= cfg.learning_rate * g;
                }
                for (b, g) in layer.bias.iter_mut().zip(&grad.bias) {
                    *b -= cfg.learning_rate * g;
                }
            }
            if !model.is_finite() {
                return Err(NetError::NonFiniteLoss {
                    epoch,
                    batch,
                    loss: f64::NAN,
                });
            }
        }
        let epoch_loss = loss(&model, data.x(), data.y())?;
        if !epoch_loss.is_finite() {
            return Err(NetError::NonFiniteLoss {
                epoch,
                batch: usize::MAX,
                loss: epoch_loss,
            });
        }
        history.push(epoch_loss);
    }
    Ok(TrainOutcome {
        model,
        loss_history: history,
    })
}

/// Top-1 accuracy. Argmax ties go to the lowest class index.
pub fn evaluate(model: &MlpModel, data: &Dataset) -> Result<f64, NetError> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let logits = model.logits(data.x())?;
    let correct = data
        .y()
        .iter()
        .enumerate()
        .filter(|&(r, &label)| argmax(logits.row(r)) == label)
        .count();
    Ok(correct as f64 / data.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

/// Replaces hidden layer `layer_name` by its pruned version and removes the
/// matching input rows from the layer that consumes it.
pub fn rebuild_with_plan(
    model: &MlpModel,
    layer_name: &str,
    plan: &PrunePlan,
) -> Result<MlpModel, NetError> {
    let Some(idx) = model.layers.iter().position(|l| l.name == layer_name) else {
        return Err(NetError::UnknownLayer(layer_name.to_string()));
    };
    let target = &model.layers[idx];
    let pruned = apply_plan(target, plan)?.into_layer(target.name.clone(), target.activation);

    let mut layers = model.layers.clone();
    let mut head = model.head.clone();
    layers[idx] = pruned;
    let consumer = if idx + 1 < layers.len() {
        &mut layers[idx + 1]
    } else {
        &mut head
    };
    consumer.weights = slice_downstream(&consumer.weights, plan)?;
    MlpModel::from_parts(layers, head, model.rng_seed)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    layers: Vec<String>,
    head: String,
    rng_seed: u64,
}

pub const MODEL_MANIFEST: &str = "model.json";

/// Reads a model directory: `model.json` plus one layer bundle subdirectory
/// per layer, named after the layer.
pub fn read_model(dir: impl AsRef<Path>) -> Result<MlpModel, NetError> {
    let dir = dir.as_ref();
    let manifest: ModelManifest = tensor_io::read_json(&dir.join(MODEL_MANIFEST))?;
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for name in &manifest.layers {
        layers.push(read_named_layer(dir, name)?);
    }
    let head = read_named_layer(dir, &manifest.head)?;
    MlpModel::from_parts(layers, head, manifest.rng_seed)
}

fn check_layer_name(name: &str) -> Result<(), NetError> {
    let ok = !name.is_empty()
        && name != MODEL_MANIFEST
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
    if ok {
        Ok(())
    } else {
        Err(NetError::InvalidModel(format!(
            "unusable layer name `{name}`"
        )))
    }
}

fn read_named_layer(dir: &Path, name: &str) -> Result<LayerBundle, NetError> {
    check_layer_name(name)?;
    let layer = tensor_io::read_layer(dir.join(name))?;
    if layer.name != name {
        return Err(NetError::InvalidModel(format!(
            "directory `{name}` holds layer `{}`",
            layer.name
        )));
    }
    Ok(layer)
}

pub fn write_model(dir: impl AsRef<Path>, model: &MlpModel) -> Result<(), NetError> {
    let dir = dir.as_ref();
    for l in model.layer_iter() {
        check_layer_name(&l.name)?;
    }
    tensor_io::ensure_dir(dir)?;
    for l in model.layer_iter() {
        tensor_io::write_layer(dir.join(&l.name), l)?;
    }
    let manifest = ModelManifest {
        layers: model.layers.iter().map(|l| l.name.clone()).collect(),
        head: model.head.name.clone(),
        rng_seed: model.rng_seed,
    };
    tensor_io::write_json(&dir.join(MODEL_MANIFEST), &manifest)?;
    Ok(())
}
