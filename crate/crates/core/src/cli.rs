//! Command-line front end.
//!
//! Parameter precedence is built-in defaults < `--config` JSON < flags. The
//! config file is an object with optional `"res"` (fields of [`ResConfig`])
//! and `"synthetic"` (fields of [`SyntheticSpec`]) members.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{clairvoyant_accuracy, SyntheticSpec, TrainingSet, CLAIRVOYANT_MAX_DIM};
use crate::error::Error;
use crate::experiments::{
    max_excursion_ratio, median, write_experiment_logs, write_histogram, write_trajectories,
    AblationExperiment, ConvergenceExperiment, HistogramExperiment, Manifest, OutputFormat,
};
use crate::losses::LossKind;
use crate::optimizer::{estimate_diagnostics, run, Method, ResConfig, StepSchedule};
use crate::rng::{self, Stream};

pub const OUTDIR_ENV: &str = "RES_SVM_OUTDIR";

#[derive(Debug, Parser)]
#[command(
    name = "res-svm",
    version,
    about = "Regularized stochastic BFGS for linear SVMs"
)]
pub struct Cli {
    /// Maximum number of worker threads (default: all cores)
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-class training set as CSV
    Generate(GenerateArgs),
    /// Train a classifier with RES or SGD and write its trajectory
    Train(TrainArgs),
    /// Evaluate a weight vector's accuracy on a data set
    Eval(EvalArgs),
    /// RES vs. SGD objective traces over several seeds
    BenchConvergence(ConvergenceArgs),
    /// Test-accuracy histograms over independent replications
    BenchHistogram(HistogramArgs),
    /// SGD vs. RES vs. unregularized stochastic BFGS at a constant step size
    BenchAblation(AblationArgs),
    /// Estimate curvature and gradient-moment constants and check the rate condition
    Diagnostics(DiagnosticsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Res,
    Sgd,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Res => Method::Res,
            MethodArg::Sgd => Method::Sgd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    SquaredHinge,
    Log,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::SquaredHinge => LossKind::SquaredHinge,
            LossArg::Log => LossKind::Log,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        }
    }
}

/// Optimizer scalars. Unset flags fall back to the config file, then to defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ParamArgs {
    /// JSON config file with optional "res" and "synthetic" objects
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Regularization weight λ [default: 1e-3]
    #[arg(long, allow_negative_numbers = true)]
    pub lambda: Option<f64>,
    /// Eigenvalue floor δ of the curvature estimate [default: 1e-3]
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    /// Minimum-progress bias Γ [default: 1e-4]
    #[arg(long, allow_negative_numbers = true)]
    pub gamma: Option<f64>,
    /// Minibatch size L [default: 5 for RES, 1 for SGD]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Initial step size ε₀ of ε₀τ/(τ+t) [default: 3e-2]
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon0: Option<f64>,
    /// Decay horizon τ of ε₀τ/(τ+t) [default: 100]
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// Use a constant step size instead of the decaying schedule
    #[arg(long, allow_negative_numbers = true, conflicts_with_all = ["epsilon0", "tau"])]
    pub constant_step: Option<f64>,
    /// Loss function [default: squared-hinge]
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Iterations to run [default: 500]
    #[arg(long)]
    pub max_iters: Option<u64>,
    /// Seed of the minibatch stream [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Where training data comes from: a CSV file or the synthetic generator.
#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Training data CSV (label,feat_1,...,feat_n); generated when absent
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// The data CSV has a header row
    #[arg(long)]
    pub header: bool,
    /// Feature dimension of generated data [default: 4]
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of generated samples, must be even [default: 10000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Seed of the data generator [default: 0]
    #[arg(long)]
    pub data_seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Output directory
    #[arg(long, env = OUTDIR_ENV, default_value = "results")]
    pub outdir: PathBuf,
    /// Output format for trajectories and histograms
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON config file with an optional "synthetic" object
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV path [default: <outdir>/generate/train.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Optimization method
    #[arg(long, value_enum, default_value = "res")]
    pub method: MethodArg,
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Record the objective every this many iterations
    #[arg(long, default_value_t = 10)]
    pub record_every: u64,
    /// Write the final curvature matrix (row-major CSV) to this path
    #[arg(long)]
    pub dump_matrix: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Weights JSON written by `train`
    #[arg(long)]
    pub weights: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Args)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Feature dimension
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    /// Training set size
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Samples processed per run [default: 2500 for n <= 10, 3500 otherwise]
    #[arg(long)]
    pub budget: Option<u64>,
    /// Minibatch size of the SGD baseline
    #[arg(long, default_value_t = 1)]
    pub sgd_batch_size: usize,
    /// Number of seeds
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// First seed; seeds are base, base+1, ...
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    /// Trace resolution in processed samples
    #[arg(long, default_value_t = 5)]
    pub record_every_samples: u64,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Args)]
pub struct HistogramArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    /// Methods to run
    #[arg(long, value_enum, num_args = 1.., default_values = ["res", "sgd"])]
    pub method: Vec<MethodArg>,
    /// Feature dimension
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    /// Training samples per replication (all processed once)
    #[arg(long, default_value_t = 2_500)]
    pub train_samples: usize,
    /// Test samples per replication [default: 1000, or 10000 with --paper-scale]
    #[arg(long)]
    pub test_samples: Option<usize>,
    /// Replications [default: 100, or 1000 with --paper-scale]
    #[arg(long)]
    pub replications: Option<u64>,
    /// Use 1000 replications and 10^4 test samples
    #[arg(long)]
    pub paper_scale: bool,
    /// Seed of replication 0
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    /// Feature dimension
    #[arg(long, default_value_t = 10)]
    pub n: usize,
    /// Training set size
    #[arg(long, default_value_t = 10_000)]
    pub samples: usize,
    /// Samples processed per run
    #[arg(long, default_value_t = 10_000)]
    pub budget: u64,
    /// Constant step size
    #[arg(long, default_value_t = 0.1)]
    pub step: f64,
    /// Number of seeds
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// First seed
    #[arg(long, default_value_t = 0)]
    pub base_seed: u64,
    #[command(flatten)]
    pub output: OutArgs,
}

#[derive(Debug, Args)]
pub struct DiagnosticsArgs {
    #[command(flatten)]
    pub params: ParamArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Number of random probe points
    #[arg(long, default_value_t = 100)]
    pub probe_points: usize,
    /// Seed of the probe stream
    #[arg(long, default_value_t = 0)]
    pub probe_seed: u64,
    #[command(flatten)]
    pub output: OutArgs,
}

/// Failure of a CLI invocation, mapped onto exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("run faulted at iteration {iteration}: {reason}")]
    Fault { iteration: u64, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_usage() => 2,
            CliError::Core(_) | CliError::Fault { .. } => 1,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    res: Option<Value>,
    synthetic: Option<Value>,
}

fn load_file_config(path: Option<&Path>) -> CliResult<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn merge(base: &mut Value, overlay: &Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    // A schedule switches kind wholesale rather than merging fields.
                    Some(slot) if k != "schedule" => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn layered<T: Serialize + for<'de> Deserialize<'de>>(
    base: &T,
    overlay: Option<&Value>,
    what: &str,
) -> CliResult<T> {
    let mut value = serde_json::to_value(base).map_err(Error::from)?;
    if let Some(o) = overlay {
        merge(&mut value, o);
    }
    serde_json::from_value(value)
        .map_err(|e| CliError::Usage(format!("invalid {what} config: {e}")))
}

/// Resolves the optimizer config for `method`: defaults < file < flags.
pub fn resolve_res_config(params: &ParamArgs, method: Method) -> CliResult<ResConfig> {
    let file = load_file_config(params.config.as_deref())?;
    let base = match method {
        Method::Res => ResConfig::default(),
        Method::Sgd => ResConfig::sgd_default(),
    };
    let mut cfg: ResConfig = layered(&base, file.res.as_ref(), "res")?;
    apply_param_flags(params, &mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_param_flags(p: &ParamArgs, cfg: &mut ResConfig) {
    if let Some(v) = p.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = p.delta {
        cfg.delta = v;
    }
    if let Some(v) = p.gamma {
        cfg.gamma = v;
    }
    if let Some(v) = p.batch_size {
        cfg.batch_size = v;
    }
    if let Some(eps) = p.constant_step {
        cfg.schedule = StepSchedule::Constant { eps };
    } else if p.epsilon0.is_some() || p.tau.is_some() {
        let (eps0, tau) = match (cfg.schedule, StepSchedule::default()) {
            (StepSchedule::Decaying { eps0, tau }, _)
            | (_, StepSchedule::Decaying { eps0, tau }) => (eps0, tau),
            _ => unreachable!("default schedule is decaying"),
        };
        cfg.schedule = StepSchedule::Decaying {
            eps0: p.epsilon0.unwrap_or(eps0),
            tau: p.tau.unwrap_or(tau),
        };
    }
    if let Some(l) = p.loss {
        cfg.loss = l.into();
    }
    if let Some(v) = p.max_iters {
        cfg.max_iters = v;
    }
    if let Some(v) = p.seed {
        cfg.seed = v;
    }
}

/// Resolves the synthetic-data spec: defaults < file < flags.
pub fn resolve_synthetic(data: &DataArgs, config: Option<&Path>) -> CliResult<SyntheticSpec> {
    let file = load_file_config(config)?;
    let mut spec: SyntheticSpec = layered(
        &SyntheticSpec::default(),
        file.synthetic.as_ref(),
        "synthetic",
    )?;
    if let Some(n) = data.n {
        spec.n = n;
    }
    if let Some(count) = data.samples {
        spec.count = count;
    }
    if let Some(seed) = data.data_seed {
        spec.seed = seed;
    }
    spec.validate()?;
    Ok(spec)
}

fn load_or_generate(data: &DataArgs, config: Option<&Path>) -> CliResult<(TrainingSet, Value)> {
    match &data.data {
        Some(path) => {
            let set = TrainingSet::load_csv(path, data.header)?;
            Ok((set, json!({ "csv": path, "header": data.header })))
        }
        None => {
            let spec = resolve_synthetic(data, config)?;
            let set = spec.generate()?;
            Ok((set, json!({ "synthetic": spec })))
        }
    }
}

fn finish(manifest: &Manifest, dir: &Path) -> CliResult<()> {
    let path = dir.join("manifest.json");
    manifest.write(&path)?;
    eprintln!("manifest: {}", path.display());
    Ok(())
}

fn print_json(value: &Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).unwrap_or_default()
    );
}

#[derive(Debug, Serialize, Deserialize)]
pub struct WeightsFile {
    pub w: Vec<f64>,
}

fn cmd_generate(args: &GenerateArgs) -> CliResult<()> {
    let spec = resolve_synthetic(&args.data, args.config.as_deref())?;
    let dir = args.output.outdir.join("generate");
    let out = args.out.clone().unwrap_or_else(|| dir.join("train.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    eprintln!("generating {} samples in dimension {}", spec.count, spec.n);
    spec.generate()?.save_csv(&out, args.data.header)?;
    let mut manifest = Manifest::new(
        "generate",
        json!({ "synthetic": spec, "header": args.data.header }),
    );
    manifest.files.push(out);
    finish(&manifest, &dir)
}

fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let method: Method = args.method.into();
    let cfg = resolve_res_config(&args.params, method)?;
    let (set, data_desc) = load_or_generate(&args.data, args.params.config.as_deref())?;
    if args.record_every == 0 {
        return Err(CliError::Usage("--record-every must be at least 1".into()));
    }
    eprintln!(
        "training {:?} for {} iterations on {} samples",
        method,
        cfg.max_iters,
        set.len()
    );
    let out = run(&cfg, &set, method, args.record_every)?;
    let log = &out.trajectory;

    let dir = args.output.outdir.join("train");
    let ext = match args.output.format {
        FormatArg::Csv => "csv",
        FormatArg::Json => "json",
    };
    let traj_path = dir.join(format!("{}_seed{}.{ext}", log.method, log.seed));
    write_trajectories(
        std::slice::from_ref(log),
        &traj_path,
        args.output.format.into(),
    )?;
    let weights_path = dir.join("weights.json");
    let weights = WeightsFile {
        w: out.w.iter().copied().collect(),
    };
    fs::write(
        &weights_path,
        serde_json::to_string_pretty(&weights).map_err(Error::from)?,
    )
    .map_err(|e| Error::io(&weights_path, e))?;

    let mut manifest = Manifest::new(
        "train",
        json!({ "method": method, "config": cfg, "data": data_desc, "record_every": args.record_every }),
    );
    manifest.files.extend([traj_path, weights_path]);
    if let (Some(path), Some(h)) = (&args.dump_matrix, &out.hessian) {
        h.write_csv(path)?;
        manifest.files.push(path.clone());
    }
    finish(&manifest, &dir)?;

    print_json(&json!({
        "method": log.method,
        "iterations": log.entries.last().map(|e| e.t),
        "final_objective": log.final_objective(),
        "skipped_updates": out.skip_count,
        "fault": log.fault,
    }));
    match &log.fault {
        Some(f) => Err(CliError::Fault {
            iteration: f.iteration,
            reason: f.reason.clone(),
        }),
        None => Ok(()),
    }
}

fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let text = fs::read_to_string(&args.weights).map_err(|e| Error::io(&args.weights, e))?;
    let weights: WeightsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("{}: {e}", args.weights.display())))?;
    let w = DVector::from_vec(weights.w);
    let (set, data_desc) = match &args.data.data {
        Some(_) => load_or_generate(&args.data, None)?,
        None => {
            let spec = resolve_synthetic(&args.data, None)?;
            let set = spec.generate_with(&mut rng::stream(spec.seed, Stream::TestSet))?;
            (set, json!({ "synthetic_test": spec }))
        }
    };
    let accuracy = set.accuracy(&w)?;
    let dir = args.output.outdir.join("eval");
    let mut manifest = Manifest::new(
        "eval",
        json!({ "weights": args.weights, "data": data_desc }),
    );
    manifest.files.push(args.weights.clone());
    finish(&manifest, &dir)?;
    let mut summary = json!({ "accuracy": accuracy, "samples": set.len() });
    if args.data.data.is_none() && set.dim() <= CLAIRVOYANT_MAX_DIM {
        summary["clairvoyant_accuracy"] = json!(clairvoyant_accuracy(set.dim())?);
    }
    print_json(&summary);
    Ok(())
}

fn cmd_convergence(args: &ConvergenceArgs) -> CliResult<()> {
    let res = resolve_res_config(&args.params, Method::Res)?;
    let sgd = ResConfig {
        batch_size: args.sgd_batch_size,
        ..res.clone()
    };
    sgd.validate()?;
    let seeds: Vec<u64> = (0..args.seeds).map(|k| args.base_seed + k).collect();
    let exp = ConvergenceExperiment {
        n: args.n,
        count: args.samples,
        res,
        sgd,
        budget_samples: args
            .budget
            .unwrap_or(if args.n <= 10 { 2_500 } else { 3_500 }),
        seeds,
        record_every_samples: args.record_every_samples,
    };
    eprintln!(
        "convergence: n={} budget={} seeds={}",
        exp.n,
        exp.budget_samples,
        exp.seeds.len()
    );
    let logs = exp.run()?;
    let files = write_logs(&args.output, "convergence", &logs)?;

    let finals = |label: &str| -> Vec<f64> {
        logs.iter()
            .filter(|l| l.method.as_str() == label)
            .filter_map(|l| l.final_objective())
            .collect()
    };
    let (res_f, sgd_f) = (finals("res"), finals("sgd"));
    let mut manifest = Manifest::new(
        "convergence",
        serde_json::to_value(&exp).map_err(Error::from)?,
    );
    manifest.files = files;
    finish(&manifest, &args.output.outdir.join("convergence"))?;
    print_json(&json!({
        "res_final_objective": res_f,
        "sgd_final_objective": sgd_f,
        "res_median": median(&res_f),
        "sgd_median": median(&sgd_f),
    }));
    Ok(())
}

fn write_logs(
    output: &OutArgs,
    experiment: &str,
    logs: &[crate::trajectory::TrajectoryLog],
) -> CliResult<Vec<PathBuf>> {
    Ok(match output.format {
        FormatArg::Csv => write_experiment_logs(&output.outdir, experiment, logs)?,
        FormatArg::Json => {
            let path = output.outdir.join(experiment).join("trajectories.json");
            write_trajectories(logs, &path, OutputFormat::Json)?;
            vec![path]
        }
    })
}

fn cmd_histogram(args: &HistogramArgs) -> CliResult<()> {
    let dir = args.output.outdir.join("histogram");
    let mut manifest = Manifest::new("histogram", Value::Null);
    let mut params = serde_json::Map::new();
    let mut summary = serde_json::Map::new();
    let mut results = Vec::new();
    for &m in &args.method {
        let method: Method = m.into();
        let cfg = resolve_res_config(&args.params, method)?;
        let base = if args.paper_scale {
            HistogramExperiment::paper_scale(method, args.base_seed)
        } else {
            HistogramExperiment::desk(method, args.base_seed)
        };
        let exp = HistogramExperiment {
            n: args.n,
            train_count: args.train_samples,
            test_count: args.test_samples.unwrap_or(base.test_count),
            replications: args.replications.unwrap_or(base.replications),
            cfg,
            ..base
        };
        eprintln!("histogram: {:?}, {} replications", method, exp.replications);
        let hist = exp.run()?;
        let ext = match args.output.format {
            FormatArg::Csv => "csv",
            FormatArg::Json => "json",
        };
        let path = dir.join(format!("{}.{ext}", hist.method));
        write_histogram(&hist, &path, args.output.format.into())?;
        manifest.files.push(path);
        params.insert(
            hist.method.to_string(),
            serde_json::to_value(&exp).map_err(Error::from)?,
        );
        summary.insert(
            hist.method.to_string(),
            json!({ "mean": hist.mean, "max": hist.max(), "faulted": hist.faulted.len() }),
        );
        results.push(hist);
    }
    if let (Some(res), Some(sgd)) = (
        results.iter().find(|h| h.method.as_str() == "res"),
        results.iter().find(|h| h.method.as_str() == "sgd"),
    ) {
        summary.insert(
            "res_fraction_above_sgd_max".into(),
            json!(res.fraction_above(sgd.max())),
        );
    }
    if args.n <= CLAIRVOYANT_MAX_DIM {
        summary.insert(
            "clairvoyant_accuracy".into(),
            json!(clairvoyant_accuracy(args.n)?),
        );
    }
    manifest.parameters = Value::Object(params);
    finish(&manifest, &dir)?;
    print_json(&Value::Object(summary));
    Ok(())
}

fn cmd_ablation(args: &AblationArgs) -> CliResult<()> {
    let mut all = Vec::new();
    let mut ratios = Vec::new();
    let mut experiments = Vec::new();
    for k in 0..args.seeds {
        let exp = AblationExperiment {
            n: args.n,
            count: args.samples,
            budget_samples: args.budget,
            base_seed: args.base_seed + k,
            eps: args.step,
            record_every_samples: 5,
        };
        eprintln!("ablation: seed {}", exp.base_seed);
        let logs = exp.run()?;
        ratios.push(json!({
            "seed": exp.base_seed,
            "max_excursion_ratio": logs.iter().map(|l| {
                let r = max_excursion_ratio(l, args.budget);
                (l.method.to_string(), if r.is_finite() { json!(r) } else { json!("inf") })
            }).collect::<serde_json::Map<_, _>>(),
            "faults": logs.iter().filter_map(|l| l.fault.as_ref().map(|f| json!({"method": l.method, "iteration": f.iteration, "reason": f.reason}))).collect::<Vec<_>>(),
        }));
        experiments.push(exp);
        all.extend(logs);
    }
    let files = write_logs(&args.output, "ablation", &all)?;
    let dir = args.output.outdir.join("ablation");
    let configs: Vec<Value> = experiments
        .first()
        .map(|e| {
            e.configs()
                .iter()
                .map(|(m, c)| json!({ "method": m, "config": c }))
                .collect()
        })
        .unwrap_or_default();
    let mut manifest = Manifest::new(
        "ablation",
        json!({ "experiments": experiments, "configs": configs }),
    );
    manifest.files = files;
    finish(&manifest, &dir)?;
    print_json(&json!({ "seeds": ratios }));
    Ok(())
}

fn cmd_diagnostics(args: &DiagnosticsArgs) -> CliResult<()> {
    let cfg = resolve_res_config(&args.params, Method::Res)?;
    let (set, data_desc) = load_or_generate(&args.data, args.params.config.as_deref())?;
    let mut probe = rng::stream(args.probe_seed, Stream::Probe);
    let diag = estimate_diagnostics(&cfg, &set, args.probe_points, &mut probe)?;
    let product = match cfg.schedule {
        StepSchedule::Decaying { eps0, tau } => Some(2.0 * eps0 * tau * cfg.gamma),
        StepSchedule::Constant { .. } => None,
    };
    let dir = args.output.outdir.join("diagnostics");
    let manifest = Manifest::new(
        "diagnostics",
        json!({ "config": cfg, "data": data_desc, "probe_points": args.probe_points, "probe_seed": args.probe_seed }),
    );
    finish(&manifest, &dir)?;
    print_json(&json!({
        "m_tilde": diag.m_tilde,
        "M_tilde": diag.big_m_tilde,
        "s_sq_estimate": diag.s_sq_estimate,
        "two_eps0_tau_gamma": product,
        "rate_condition_ok": diag.rate_condition_ok,
    }));
    Ok(())
}

pub fn execute(command: &Command) -> CliResult<()> {
    match command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::BenchConvergence(a) => cmd_convergence(a),
        Command::BenchHistogram(a) => cmd_histogram(a),
        Command::BenchAblation(a) => cmd_ablation(a),
        Command::Diagnostics(a) => cmd_diagnostics(a),
    }
}

/// Parses `argv`, runs the command and maps the outcome to an exit code.
pub fn main_with_args<I, T>(argv: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = match cli.jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(jobs) => match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
            Ok(pool) => pool.install(|| execute(&cli.command)),
            Err(e) => Err(CliError::Usage(e.to_string())),
        },
        None => execute(&cli.command),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
