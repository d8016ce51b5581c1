//! Prune plans and structured layer slicing.
//!
//! A plan drops the `k = ⌊p·n⌋` lowest-ranked neurons of a layer. Applying it
//! keeps the surviving columns (and bias entries) bit for bit; the consuming
//! layer loses the matching input rows.

use serde::{Deserialize, Serialize};

use crate::centrality::{rank_ascending, CentralityScores};
use crate::matrix::{l2_norm, Matrix};
use crate::tensor_io::{Activation, LayerBundle};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PruneError {
    #[error("pruning ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("plan covers {plan_n} neurons but the layer has {layer_n}")]
    PlanMismatch { plan_n: usize, layer_n: usize },
    #[error("cannot plan over an empty layer")]
    EmptyLayer,
}

impl PruneError {
    pub fn code(&self) -> &'static str {
        match self {
            PruneError::InvalidRatio(_) => "InvalidRatio",
            PruneError::PlanMismatch { .. } => "PlanMismatch",
            PruneError::EmptyLayer => "EmptyLayer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneMethod {
    Centrality,
    Magnitude,
}

impl std::fmt::Display for PruneMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PruneMethod::Centrality => "centrality",
            PruneMethod::Magnitude => "magnitude",
        })
    }
}

/// Graph and solver parameters that produced a centrality plan.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanParams {
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrunePlan {
    pub n: usize,
    pub p: f64,
    pub k: usize,
    pub method: PruneMethod,
    /// Ascending by index.
    pub pruned: Vec<usize>,
    /// Ascending by index; maps new column -> original column.
    pub kept: Vec<usize>,
    /// Full ascending-score ranking the plan was cut from.
    pub ranking: Vec<usize>,
    pub scores: Vec<f64>,
    pub params: PlanParams,
}

impl PrunePlan {
    /// A plan that removes nothing. Legal, but usually worth a warning.
    pub fn is_noop(&self) -> bool {
        self.k == 0
    }

    pub fn kept_count(&self) -> usize {
        self.n - self.k
    }

    pub fn with_params(mut self, params: PlanParams) -> Self {
        self.params = params;
        self
    }

    pub fn manifest(&self) -> PlanManifest {
        PlanManifest {
            n: self.n,
            k: self.k,
            p: self.p,
            tau: self.params.tau,
            method: self.method,
            pruned: self.pruned.clone(),
            kept: self.kept.clone(),
            scores: self.scores.clone(),
        }
    }
}

/// On-disk form of a plan (`plan.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanManifest {
    pub n: usize,
    pub k: usize,
    pub p: f64,
    pub tau: Option<f64>,
    pub method: PruneMethod,
    pub pruned: Vec<usize>,
    pub kept: Vec<usize>,
    pub scores: Vec<f64>,
}

/// `⌊p·n⌋`, with products that land within rounding of an integer snapped to
/// it (so `0.35 · 20` is 7, not 6).
pub fn prune_count(p: f64, n: usize) -> usize {
    let x = p * n as f64;
    let nearest = x.round();
    if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        x.floor() as usize
    }
}

fn validate_ratio(p: f64) -> Result<(), PruneError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(PruneError::InvalidRatio(p))
    }
}

fn plan_from_scores(
    scores: Vec<f64>,
    p: f64,
    method: PruneMethod,
) -> Result<PrunePlan, PruneError> {
    validate_ratio(p)?;
    let n = scores.len();
    if n == 0 {
        return Err(PruneError::EmptyLayer);
    }
    let k = prune_count(p, n);
    let ranking = rank_ascending(&scores);
    let mut pruned = ranking[..k].to_vec();
    let mut kept = ranking[k..].to_vec();
    pruned.sort_unstable();
    kept.sort_unstable();
    Ok(PrunePlan {
        n,
        p,
        k,
        method,
        pruned,
        kept,
        ranking,
        scores,
        params: PlanParams::default(),
    })
}

/// Plan that drops the `⌊p·n⌋` least central neurons.
pub fn make_plan(c: &CentralityScores, p: f64) -> Result<PrunePlan, PruneError> {
    plan_from_scores(c.scores.clone(), p, PruneMethod::Centrality)
}

/// Baseline plan that drops the `⌊p·n⌋` neurons with the smallest weight
/// column norm.
pub fn magnitude_plan(layer: &LayerBundle, p: f64) -> Result<PrunePlan, PruneError> {
    validate_ratio(p)?;
    let norms = (0..layer.n())
        .map(|j| l2_norm(&layer.weights.column(j)))
        .collect();
    plan_from_scores(norms, p, PruneMethod::Magnitude)
}

/// Surviving columns of a layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub kept: Vec<usize>,
}

impl PrunedLayer {
    pub fn into_layer(self, name: impl Into<String>, activation: Activation) -> LayerBundle {
        LayerBundle::new(name, activation, self.weights, self.bias)
            .expect("invariant: pruned weights and bias agree")
    }
}

fn check_plan(plan: &PrunePlan, layer_n: usize) -> Result<(), PruneError> {
    if plan.n != layer_n {
        return Err(PruneError::PlanMismatch {
            plan_n: plan.n,
            layer_n,
        });
    }
    Ok(())
}

pub fn apply_plan(layer: &LayerBundle, plan: &PrunePlan) -> Result<PrunedLayer, PruneError> {
    check_plan(plan, layer.n())?;
    Ok(PrunedLayer {
        weights: layer.weights.select_columns(&plan.kept),
        bias: plan.kept.iter().map(|&j| layer.bias[j]).collect(),
        kept: plan.kept.clone(),
    })
}

/// Drops the input rows of the consuming layer that fed from pruned neurons.
pub fn slice_downstream(next_weights: &Matrix, plan: &PrunePlan) -> Result<Matrix, PruneError> {
    check_plan(plan, next_weights.rows())?;
    Ok(next_weights.select_rows(&plan.kept))
}
