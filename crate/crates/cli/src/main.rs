//! `centraprune` command-line pipeline.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error. Errors are
//! printed to stderr as one JSON object `{"error": code, "detail": text}`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use centraprune::centrality::{
    eigenvector_centrality_with, CentralityConfig, CentralityError, CentralityScores,
};
use centraprune::experiment::{self, parse_report, render_report, ReportFormat, SweepSpec};
use centraprune::graph::{self, DEFAULT_EPSILON};
use centraprune::net::{self, MlpModel, SyntheticTask, TrainConfig};
use centraprune::prune::{self, PlanParams, PrunePlan};
use centraprune::tensor_io::{self, Activation, LayerBundle, TensorFile};
use centraprune::Execution;

#[derive(Parser, Debug)]
#[command(
    name = "centraprune",
    version,
    about = "Eigenvector-centrality pruning of dense layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the similarity graph of a layer and score its neurons.
    Analyze(AnalyzeArgs),
    /// Prune a layer by centrality (or weight magnitude) and slice its consumer.
    Prune(PruneArgs),
    /// Train (or fine-tune) a model directory on a dataset directory.
    Train(TrainArgs),
    /// Run a method x ratio x threshold x seed sweep.
    Sweep(SweepArgs),
    /// Render a sweep report.
    Report(ReportArgs),
    /// Write a synthetic dataset directory.
    Synth(SynthArgs),
    /// Write a freshly initialised model directory.
    Init(InitArgs),
}

#[derive(Args, Debug, Clone, Copy)]
struct SolverArgs {
    /// Normalisation constant added to column norms.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Relative eigen-residual tolerance.
    #[arg(long, default_value_t = centraprune::centrality::DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = centraprune::centrality::DEFAULT_MAX_ITER)]
    max_iter: usize,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Layer directory (weights, bias, meta).
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    tau: f64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Baseline {
    Magnitude,
}

#[derive(Args, Debug)]
struct PruneArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    ratio: f64,
    /// Similarity threshold; required unless `--baseline magnitude`.
    #[arg(long)]
    tau: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Layer directory of the consumer whose input rows get sliced.
    #[arg(long)]
    next: Option<PathBuf>,
    /// Allow pruning without a consumer layer.
    #[arg(long)]
    head_only: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: usize,
    #[arg(long)]
    lr: f64,
    #[arg(long)]
    batch: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for independent cells.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Where to write per-phase wall times.
    #[arg(long)]
    timings: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Fmt {
    Md,
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Fmt::Md)]
    fmt: Fmt,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum TaskKind {
    Blobs,
    Rings,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum)]
    task: TaskKind,
    #[arg(long)]
    samples_per_class: usize,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    features: usize,
    /// Centre spread for blobs.
    #[arg(long, default_value_t = 2.0)]
    separation: f64,
    /// Point noise around each centre or ring.
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum HiddenActivation {
    Relu,
    Linear,
}

#[derive(Args, Debug)]
struct InitArgs {
    #[arg(long)]
    input: usize,
    /// Comma-separated hidden widths, e.g. `64,32`.
    #[arg(long, value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long)]
    classes: usize,
    #[arg(long, value_enum, default_value_t = HiddenActivation::Relu)]
    activation: HiddenActivation,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct CliError {
    code: String,
    detail: String,
}

impl CliError {
    fn new(code: impl Into<String>, detail: impl Into<String>) -> Self {
        Self {
            code: code.into(),
            detail: detail.into(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.code.as_str() {
            "NotConverged" | "NonFiniteLoss" | "IoFailure" => 2,
            _ => 1,
        }
    }
}

macro_rules! impl_from_coded {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::new(e.code(), e.to_string())
            }
        }
    )*};
}

impl_from_coded!(
    tensor_io::TensorIoError,
    graph::GraphError,
    CentralityError,
    prune::PruneError,
    net::NetError,
    experiment::ExperimentError
);

type CliResult<T = ()> = Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let detail = e.to_string();
            let detail = detail
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            report_error(&CliError::new("InvalidArguments", detail));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(e.exit_code())
        }
    }
}

fn report_error(e: &CliError) {
    let body = serde_json::json!({"error": e.code, "detail": e.detail});
    eprintln!("{body}");
}

fn run(command: Command) -> CliResult {
    match command {
        Command::Analyze(a) => analyze(a),
        Command::Prune(a) => prune_cmd(a),
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Report(a) => report(a),
        Command::Synth(a) => synth(a),
        Command::Init(a) => init(a),
    }
}

fn check_tau(tau: f64) -> CliResult {
    if (0.0..1.0).contains(&tau) {
        Ok(())
    } else {
        Err(graph::GraphError::InvalidThreshold(tau).into())
    }
}

fn check_solver(s: &SolverArgs) -> CliResult {
    if !(s.epsilon.is_finite() && s.epsilon > 0.0) {
        return Err(graph::GraphError::InvalidEpsilon(s.epsilon).into());
    }
    if !(s.tol.is_finite() && s.tol > 0.0) || s.max_iter == 0 {
        return Err(CliError::new(
            "InvalidParameter",
            "--tol must be positive and --max-iter at least 1",
        ));
    }
    Ok(())
}

fn check_ratio(p: f64) -> CliResult {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(prune::PruneError::InvalidRatio(p).into())
    }
}

fn write_text(path: &Path, text: &str) -> CliResult {
    tensor_io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("output serialises");
    s.push('\n');
    s
}

#[derive(Serialize)]
struct AnalyzeOutput {
    n: usize,
    tau: f64,
    edges: Vec<(usize, usize, f64)>,
    centrality: Vec<f64>,
    lambda: f64,
    iterations: usize,
    converged: bool,
}

/// Centrality scores, keeping the best-so-far vector when the solver stops
/// early so callers can still report it.
fn score_layer(
    layer: &LayerBundle,
    tau: f64,
    solver: &SolverArgs,
) -> CliResult<(graph::SimilarityGraph, CentralityScores, Option<CliError>)> {
    let g = graph::graph_from_weights(&layer.weights, tau, solver.epsilon, Execution::Parallel)?;
    let cfg = CentralityConfig::new(solver.tol, solver.max_iter);
    match eigenvector_centrality_with(&g, &cfg) {
        Ok(scores) => Ok((g, scores, None)),
        Err(CentralityError::NotConverged(best)) => {
            let err = CentralityError::NotConverged(best.clone()).into();
            Ok((g, *best, Some(err)))
        }
        Err(e) => Err(e.into()),
    }
}

fn analyze(a: AnalyzeArgs) -> CliResult {
    check_tau(a.tau)?;
    check_solver(&a.solver)?;
    let layer = tensor_io::read_layer(&a.weights)?;
    let (g, scores, failure) = score_layer(&layer, a.tau, &a.solver)?;
    let out = AnalyzeOutput {
        n: g.n(),
        tau: a.tau,
        edges: g
            .edges()
            .into_iter()
            .map(|e| (e.i, e.j, e.weight))
            .collect(),
        centrality: scores.scores,
        lambda: scores.lambda,
        iterations: scores.iterations,
        converged: scores.converged,
    };
    let mut text = serde_json::to_string(&out).expect("output serialises");
    text.push('\n');
    match &a.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    failure.map_or(Ok(()), Err)
}

fn prune_cmd(a: PruneArgs) -> CliResult {
    check_ratio(a.ratio)?;
    check_solver(&a.solver)?;
    if let Some(tau) = a.tau {
        check_tau(tau)?;
    }
    if a.baseline.is_none() && a.tau.is_none() {
        return Err(CliError::new(
            "InvalidArguments",
            "--tau is required for centrality pruning",
        ));
    }
    if a.next.is_none() && !a.head_only {
        return Err(CliError::new(
            "MissingConsumer",
            "pass --next <layer dir> to slice the consumer, or --head-only",
        ));
    }

    let layer = tensor_io::read_layer(&a.weights)?;
    let next = a.next.as_ref().map(tensor_io::read_layer).transpose()?;
    if let Some(next) = &next {
        if next.d() != layer.n() {
            return Err(CliError::new(
                "PlanMismatch",
                format!(
                    "consumer expects {} inputs, layer has {} neurons",
                    next.d(),
                    layer.n()
                ),
            ));
        }
    }

    let plan: PrunePlan = match a.baseline {
        Some(Baseline::Magnitude) => {
            prune::magnitude_plan(&layer, a.ratio)?.with_params(PlanParams {
                tau: a.tau,
                ..PlanParams::default()
            })
        }
        None => {
            let tau = a.tau.expect("checked above");
            let (_, scores, failure) = score_layer(&layer, tau, &a.solver)?;
            if let Some(e) = failure {
                return Err(e);
            }
            prune::make_plan(&scores, a.ratio)?.with_params(PlanParams {
                tau: Some(tau),
                epsilon: Some(a.solver.epsilon),
                tol: Some(a.solver.tol),
            })
        }
    };
    if plan.is_noop() {
        eprintln!(
            "{}",
            serde_json::json!({"warning": "NoopPlan", "detail": format!("floor({} * {}) = 0 neurons pruned", a.ratio, plan.n)})
        );
    }

    let pruned = prune::apply_plan(&layer, &plan)?.into_layer(layer.name.clone(), layer.activation);
    let sliced = next
        .as_ref()
        .map(|n| prune::slice_downstream(&n.weights, &plan))
        .transpose()?;

    tensor_io::write_layer(&a.out, &pruned)?;
    if let Some(w) = &sliced {
        tensor_io::write_tensor(a.out.join("next_weights"), &TensorFile::from_matrix(w))?;
    }
    write_text(&a.out.join("plan.json"), &to_json(&plan.manifest()))?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    loss_history: Vec<f64>,
    train_accuracy: f64,
    params: usize,
}

fn train(a: TrainArgs) -> CliResult {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        learning_rate: a.lr,
        rng_seed: a.seed,
    };
    cfg.validate()?;
    let model = net::read_model(&a.model)?;
    let data = net::read_dataset(&a.data)?;
    let outcome = net::train(&model, &data, &cfg)?;
    let summary = TrainSummary {
        train_accuracy: net::evaluate(&outcome.model, &data)?,
        params: outcome.model.param_count(),
        loss_history: outcome.loss_history,
    };
    net::write_model(&a.out, &outcome.model)?;
    write_text(&a.out.join("train.json"), &to_json(&summary))?;
    Ok(())
}

fn sweep(a: SweepArgs) -> CliResult {
    if a.jobs == 0 {
        return Err(CliError::new(
            "InvalidArguments",
            "--jobs must be at least 1",
        ));
    }
    let spec: SweepSpec = tensor_io::read_json(&a.spec)?;
    spec.validate()?;
    let outcome = run_with_jobs(&spec, a.jobs)?;
    for c in &outcome.report.cells {
        let status = match (&c.error, c.accuracy) {
            (Some(e), _) => format!("failed: {e}"),
            (None, Some(acc)) => format!("accuracy {acc:.4}"),
            (None, None) => "no result".into(),
        };
        eprintln!(
            "{} p={} tau={} seed={} {status}",
            c.method.label(),
            c.p,
            c.tau,
            c.seed
        );
    }
    write_text(&a.out, &render_report(&outcome.report, ReportFormat::Json)?)?;
    if let Some(path) = &a.timings {
        write_text(path, &to_json(&outcome.timings))?;
    }
    Ok(())
}

#[cfg(feature = "parallel")]
fn run_with_jobs(spec: &SweepSpec, jobs: usize) -> CliResult<experiment::SweepOutcome> {
    if jobs == 1 {
        return Ok(experiment::run_sweep(spec, Execution::Sequential)?);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::new("IoFailure", e.to_string()))?;
    Ok(pool.install(|| experiment::run_sweep(spec, Execution::Parallel))?)
}

#[cfg(not(feature = "parallel"))]
fn run_with_jobs(spec: &SweepSpec, _jobs: usize) -> CliResult<experiment::SweepOutcome> {
    Ok(experiment::run_sweep(spec, Execution::Sequential)?)
}

fn report(a: ReportArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.input).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::new("MissingFile", a.input.display().to_string()),
        _ => CliError::new("IoFailure", e.to_string()),
    })?;
    let report = parse_report(&text, ReportFormat::Json)?;
    let fmt = match a.fmt {
        Fmt::Md => ReportFormat::Markdown,
        Fmt::Json => ReportFormat::Json,
        Fmt::Csv => ReportFormat::Csv,
    };
    let rendered = render_report(&report, fmt)?;
    match &a.out {
        Some(path) => write_text(path, &rendered),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> CliResult {
    let task = match a.task {
        TaskKind::Blobs => SyntheticTask::Blobs {
            samples_per_class: a.samples_per_class,
            num_classes: a.classes,
            features: a.features,
            separation: a.separation,
            spread: a.noise,
        },
        TaskKind::Rings => SyntheticTask::Rings {
            samples_per_class: a.samples_per_class,
            num_classes: a.classes,
            features: a.features,
            noise: a.noise,
        },
    };
    let data = task.generate(a.seed)?;
    net::write_dataset(&a.out, &data)?;
    Ok(())
}

fn init(a: InitArgs) -> CliResult {
    let activation = match a.activation {
        HiddenActivation::Relu => Activation::Relu,
        HiddenActivation::Linear => Activation::Linear,
    };
    let model = MlpModel::new(a.input, &a.hidden, activation, a.classes, a.seed)?;
    net::write_model(&a.out, &model)?;
    Ok(())
}
