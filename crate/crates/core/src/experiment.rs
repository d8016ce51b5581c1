//! Method × ratio × threshold × seed sweeps over a synthetic task.
//!
//! For every seed the task model is pretrained once. Every cell then plans a
//! prune of one hidden layer (or skips pruning for the `none` control arm),
//! rebuilds the model, fine-tunes it and measures validation accuracy. Cells
//! run independently; the report is assembled in (method, p, tau, seed) order
//! so it does not depend on scheduling.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::centrality::{
    eigenvector_centrality_with, CentralityConfig, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::graph::{graph_from_weights, DEFAULT_EPSILON};
use crate::net::{self, Dataset, MlpModel, NetError, SyntheticTask, TrainConfig};
use crate::par::{self, Execution};
use crate::prune::{magnitude_plan, make_plan, PlanParams};
use crate::tensor_io::Activation;

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid sweep spec: {0}")]
    InvalidSpec(String),
    #[error("report has no cells")]
    EmptyReport,
    #[error("cannot parse report: {0}")]
    MalformedReport(String),
    #[error(transparent)]
    Net(#[from] NetError),
}

impl ExperimentError {
    pub fn code(&self) -> &'static str {
        match self {
            ExperimentError::InvalidSpec(_) => "InvalidSpec",
            ExperimentError::EmptyReport => "EmptyReport",
            ExperimentError::MalformedReport(_) => "MalformedReport",
            ExperimentError::Net(e) => e.code(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Centrality,
    Magnitude,
    None,
}

impl Method {
    pub fn label(self) -> &'static str {
        match self {
            Method::Centrality => "centrality",
            Method::Magnitude => "magnitude",
            Method::None => "none",
        }
    }
}

/// Optimiser settings for one training phase. Shuffle seeds come from the
/// sweep seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl PhaseConfig {
    fn with_seed(self, rng_seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            rng_seed,
        }
    }
}

fn default_train_fraction() -> f64 {
    0.7
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub task: SyntheticTask,
    /// Seed of the dataset draw and train/validation split; fixed across
    /// sweep seeds so repeated runs see the same data.
    pub data_seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Name of the hidden layer to prune (`hidden0`, `hidden1`, ...).
    pub prune_layer: String,
    pub ratios: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub methods: Vec<Method>,
    /// Each seed drives model initialisation and both shuffle streams.
    pub seeds: Vec<u64>,
    pub pretrain: PhaseConfig,
    pub finetune: PhaseConfig,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::InvalidSpec(msg));
        if self.ratios.is_empty()
            || self.thresholds.is_empty()
            || self.methods.is_empty()
            || self.seeds.is_empty()
        {
            return bad("ratios, thresholds, methods and seeds must be nonempty".into());
        }
        if let Some(p) = self.ratios.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return bad(format!("ratio {p} outside (0, 1)"));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return bad(format!("threshold {t} outside [0, 1)"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            ));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) || self.max_iter == 0 {
            return bad("tol must be positive and max_iter at least 1".into());
        }
        let names: Vec<String> = (0..self.hidden.len())
            .map(|i| format!("hidden{i}"))
            .collect();
        if !names.contains(&self.prune_layer) {
            return bad(format!(
                "prune_layer `{}` is not one of {names:?}",
                self.prune_layer
            ));
        }
        for phase in [self.pretrain, self.finetune] {
            phase.with_seed(0).validate()?;
        }
        Ok(())
    }

    fn sorted<T: Copy>(values: &[T], cmp: impl Fn(&T, &T) -> std::cmp::Ordering) -> Vec<T> {
        let mut v = values.to_vec();
        v.sort_by(&cmp);
        v.dedup_by(|a, b| cmp(a, b).is_eq());
        v
    }

    /// Every (method, p, tau, seed) cell in report order.
    pub fn cells(&self) -> Vec<CellKey> {
        let methods = Self::sorted(&self.methods, Ord::cmp);
        let ratios = Self::sorted(&self.ratios, f64::total_cmp);
        let taus = Self::sorted(&self.thresholds, f64::total_cmp);
        let seeds = Self::sorted(&self.seeds, Ord::cmp);
        let mut out = Vec::new();
        for &method in &methods {
            for &p in &ratios {
                for &tau in &taus {
                    for &seed in &seeds {
                        out.push(CellKey {
                            method,
                            p,
                            tau,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellKey {
    pub method: Method,
    pub p: f64,
    pub tau: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub method: Method,
    pub p: f64,
    pub tau: f64,
    pub seed: u64,
    pub accuracy: Option<f64>,
    pub params_before: usize,
    pub params_after: Option<usize>,
    pub pruned: Option<usize>,
    pub error: Option<String>,
}

impl CellRecord {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub p: f64,
    pub tau: f64,
    pub runs: usize,
    pub failed: usize,
    pub mean_accuracy: Option<f64>,
    /// Population standard deviation over successful seeds.
    pub std_accuracy: Option<f64>,
    pub params_after: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<CellRecord>,
    pub aggregates: Vec<Aggregate>,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

impl ExperimentReport {
    /// Builds a report, recomputing the per-(method, p, tau) aggregates.
    pub fn from_cells(cells: Vec<CellRecord>) -> Self {
        let mut aggregates: Vec<Aggregate> = Vec::new();
        let mut start = 0;
        while start < cells.len() {
            let first = &cells[start];
            let end = cells[start..]
                .iter()
                .position(|c| (c.method, c.p, c.tau) != (first.method, first.p, first.tau))
                .map_or(cells.len(), |off| start + off);
            let group = &cells[start..end];
            let accs: Vec<f64> = group.iter().filter_map(|c| c.accuracy).collect();
            let stats = mean_std(&accs);
            aggregates.push(Aggregate {
                method: first.method,
                p: first.p,
                tau: first.tau,
                runs: group.len(),
                failed: group.iter().filter(|c| c.failed()).count(),
                mean_accuracy: stats.map(|s| s.0),
                std_accuracy: stats.map(|s| s.1),
                params_after: group.iter().find_map(|c| c.params_after),
            });
            start = end;
        }
        Self { cells, aggregates }
    }

    pub fn aggregate(&self, method: Method, p: f64, tau: f64) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.p == p && a.tau == tau)
    }
}

/// Seconds spent in each phase of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellTiming {
    pub method: Method,
    pub p: f64,
    pub tau: f64,
    pub seed: u64,
    pub graph_secs: f64,
    pub centrality_secs: f64,
    pub train_secs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedTiming {
    pub seed: u64,
    pub pretrain_secs: f64,
    pub pretrain_accuracy: f64,
}

/// Wall-clock measurements, kept apart from the report so the report itself
/// is reproducible byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTimings {
    pub seeds: Vec<SeedTiming>,
    pub cells: Vec<CellTiming>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: ExperimentReport,
    pub timings: SweepTimings,
}

fn phase_seed(seed: u64, phase: u64) -> u64 {
    // splitmix64 finaliser keeps the streams of nearby seeds unrelated
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(phase.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Pretrained {
    seed: u64,
    model: MlpModel,
}

/// Runs every cell of `spec`. Cells are spread over the current rayon pool
/// when `exec` is parallel.
pub fn run_sweep(spec: &SweepSpec, exec: Execution) -> Result<SweepOutcome, ExperimentError> {
    spec.validate()?;
    let data = spec.task.generate(spec.data_seed)?;
    let (train_set, val_set) = data.split(spec.train_fraction, spec.data_seed);
    if train_set.is_empty() || val_set.is_empty() {
        return Err(ExperimentError::InvalidSpec(
            "train or validation split is empty".into(),
        ));
    }

    let mut seeds = spec.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();
    let pretrained: Vec<Result<(Pretrained, SeedTiming), NetError>> =
        par::map_slice(&seeds, exec, |&seed| {
            let start = Instant::now();
            let model = MlpModel::new(
                data.features(),
                &spec.hidden,
                spec.activation,
                data.num_classes(),
                phase_seed(seed, 0),
            )?;
            let model = net::train(
                &model,
                &train_set,
                &spec.pretrain.with_seed(phase_seed(seed, 1)),
            )?
            .model;
            let pretrain_accuracy = net::evaluate(&model, &val_set)?;
            Ok((
                Pretrained { seed, model },
                SeedTiming {
                    seed,
                    pretrain_secs: start.elapsed().as_secs_f64(),
                    pretrain_accuracy,
                },
            ))
        });
    let mut models = Vec::with_capacity(seeds.len());
    let mut seed_timings = Vec::with_capacity(seeds.len());
    for r in pretrained {
        let (p, t) = r?;
        models.push(p);
        seed_timings.push(t);
    }

    let keys = spec.cells();
    let results: Vec<(CellRecord, CellTiming)> = par::map_slice(&keys, exec, |key| {
        let base = models
            .iter()
            .find(|m| m.seed == key.seed)
            .expect("every seed was pretrained");
        run_cell(spec, key, &base.model, &train_set, &val_set)
    });
    let (cells, cell_timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(SweepOutcome {
        report: ExperimentReport::from_cells(cells),
        timings: SweepTimings {
            seeds: seed_timings,
            cells: cell_timings,
        },
    })
}

fn run_cell(
    spec: &SweepSpec,
    key: &CellKey,
    pretrained: &MlpModel,
    train_set: &Dataset,
    val_set: &Dataset,
) -> (CellRecord, CellTiming) {
    let mut timing = CellTiming {
        method: key.method,
        p: key.p,
        tau: key.tau,
        seed: key.seed,
        graph_secs: 0.0,
        centrality_secs: 0.0,
        train_secs: 0.0,
    };
    let params_before = pretrained.param_count();
    let outcome = (|| -> Result<(f64, usize, usize), String> {
        let layer = pretrained
            .layer(&spec.prune_layer)
            .expect("validated prune layer exists");
        let (model, k) = match key.method {
            Method::None => (pretrained.clone(), 0),
            Method::Magnitude => {
                let plan = magnitude_plan(layer, key.p).map_err(|e| e.code().to_string())?;
                let model = net::rebuild_with_plan(pretrained, &spec.prune_layer, &plan)
                    .map_err(|e| e.code().to_string())?;
                (model, plan.k)
            }
            Method::Centrality => {
                let start = Instant::now();
                let g = graph_from_weights(
                    &layer.weights,
                    key.tau,
                    spec.epsilon,
                    Execution::Sequential,
                )
                .map_err(|e| e.code().to_string())?;
                timing.graph_secs = start.elapsed().as_secs_f64();
                let start = Instant::now();
                let cfg =
                    CentralityConfig::new(spec.tol, spec.max_iter).with_exec(Execution::Sequential);
                let scores =
                    eigenvector_centrality_with(&g, &cfg).map_err(|e| e.code().to_string())?;
                timing.centrality_secs = start.elapsed().as_secs_f64();
                let plan = make_plan(&scores, key.p)
                    .map_err(|e| e.code().to_string())?
                    .with_params(PlanParams {
                        tau: Some(key.tau),
                        epsilon: Some(spec.epsilon),
                        tol: Some(spec.tol),
                    });
                let model = net::rebuild_with_plan(pretrained, &spec.prune_layer, &plan)
                    .map_err(|e| e.code().to_string())?;
                (model, plan.k)
            }
        };
        let start = Instant::now();
        let tuned = net::train(
            &model,
            train_set,
            &spec.finetune.with_seed(phase_seed(key.seed, 2)),
        )
        .map_err(|e| e.code().to_string())?
        .model;
        timing.train_secs = start.elapsed().as_secs_f64();
        let acc = net::evaluate(&tuned, val_set).map_err(|e| e.code().to_string())?;
        Ok((acc, tuned.param_count(), k))
    })();
    let record = match outcome {
        Ok((accuracy, params_after, k)) => CellRecord {
            method: key.method,
            p: key.p,
            tau: key.tau,
            seed: key.seed,
            accuracy: Some(accuracy),
            params_before,
            params_after: Some(params_after),
            pruned: Some(k),
            error: None,
        },
        Err(code) => CellRecord {
            method: key.method,
            p: key.p,
            tau: key.tau,
            seed: key.seed,
            accuracy: None,
            params_before,
            params_after: None,
            pruned: None,
            error: Some(code),
        },
    };
    (record, timing)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

pub fn render_report(r: &ExperimentReport, fmt: ReportFormat) -> Result<String, ExperimentError> {
    if r.cells.is_empty() {
        return Err(ExperimentError::EmptyReport);
    }
    Ok(match fmt {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(r).expect("report serialises");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            for c in &r.cells {
                w.serialize(c).expect("in-memory csv write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
        }
        ReportFormat::Markdown => render_markdown(r),
    })
}

/// Parses a report rendered as JSON or CSV. CSV carries only the cells; the
/// aggregates are recomputed.
pub fn parse_report(text: &str, fmt: ReportFormat) -> Result<ExperimentReport, ExperimentError> {
    let malformed = |e: String| ExperimentError::MalformedReport(e);
    let report = match fmt {
        ReportFormat::Json => serde_json::from_str(text).map_err(|e| malformed(e.to_string()))?,
        ReportFormat::Csv => {
            let cells = csv::Reader::from_reader(text.as_bytes())
                .deserialize()
                .collect::<Result<Vec<CellRecord>, _>>()
                .map_err(|e| malformed(e.to_string()))?;
            ExperimentReport::from_cells(cells)
        }
        ReportFormat::Markdown => {
            return Err(malformed("markdown reports are not parseable".into()))
        }
    };
    Ok(report)
}

fn fmt_acc(a: &Aggregate) -> String {
    match (a.mean_accuracy, a.std_accuracy) {
        (Some(m), Some(s)) if a.failed == 0 => format!("{:.2} ± {:.2}", 100.0 * m, 100.0 * s),
        (Some(m), Some(s)) => format!("{:.2} ± {:.2} ({} failed)", 100.0 * m, 100.0 * s, a.failed),
        _ => format!("failed ({}/{})", a.failed, a.runs),
    }
}

fn render_markdown(r: &ExperimentReport) -> String {
    let mut methods: Vec<Method> = r.aggregates.iter().map(|a| a.method).collect();
    methods.sort();
    methods.dedup();
    let mut rows: Vec<(f64, f64)> = r.aggregates.iter().map(|a| (a.p, a.tau)).collect();
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    rows.dedup();

    let mut out = String::new();
    let _ = writeln!(
        out,
        "Top-1 validation accuracy (%), mean ± std over seeds\n"
    );
    let header: Vec<&str> = methods.iter().map(|m| m.label()).collect();
    let _ = writeln!(out, "| ratio | tau | {} |", header.join(" | "));
    let _ = writeln!(out, "|---|---|{}", "---|".repeat(methods.len()));
    for &(p, tau) in &rows {
        let cells: Vec<String> = methods
            .iter()
            .map(|&m| r.aggregate(m, p, tau).map_or_else(|| "-".into(), fmt_acc))
            .collect();
        let _ = writeln!(out, "| {p} | {tau} | {} |", cells.join(" | "));
    }

    let _ = writeln!(
        out,
        "\nParameters after pruning (before: {})\n",
        r.cells[0].params_before
    );
    let _ = writeln!(out, "| ratio | tau | {} |", header.join(" | "));
    let _ = writeln!(out, "|---|---|{}", "---|".repeat(methods.len()));
    for &(p, tau) in &rows {
        let cells: Vec<String> = methods
            .iter()
            .map(|&m| {
                r.aggregate(m, p, tau)
                    .and_then(|a| a.params_after)
                    .map_or_else(|| "-".into(), |v| v.to_string())
            })
            .collect();
        let _ = writeln!(out, "| {p} | {tau} | {} |", cells.join(" | "));
    }
    out
}
