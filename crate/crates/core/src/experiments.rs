//! Seeded experiment recipes: convergence traces for RES vs. SGD, test
//! accuracy histograms over independent replications, and the
//! regularization ablation under a constant step size.
//!
//! Every replication derives its generators from its own seed, so results do
//! not depend on execution order or on the size of the worker pool.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{fmt_f64, SyntheticSpec, TrainingSet};
use crate::error::{Error, Result};
use crate::optimizer::{run, Method, ResConfig, StepSchedule};
use crate::rng::{self, Stream};
pub use crate::trajectory::{Fault, MethodLabel, TrajectoryEntry, TrajectoryLog};

fn iterations_for(budget_samples: u64, cfg: &ResConfig) -> Result<u64> {
    let batch = cfg.batch_size as u64;
    if batch == 0 || !budget_samples.is_multiple_of(batch) {
        return Err(Error::InvalidParameter(format!(
            "sample budget {budget_samples} is not divisible by batch size {batch}"
        )));
    }
    Ok(budget_samples / batch)
}

fn record_interval(record_every_samples: u64, cfg: &ResConfig) -> u64 {
    (record_every_samples / cfg.batch_size as u64).max(1)
}

/// RES and SGD on the same generated training set, one pair of runs per seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceExperiment {
    pub n: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub res: ResConfig,
    pub sgd: ResConfig,
    pub budget_samples: u64,
    pub seeds: Vec<u64>,
    /// Sampling grid of the traces, in processed samples.
    pub record_every_samples: u64,
}

impl ConvergenceExperiment {
    /// Low-dimensional setting: `n = 4`, 2500 samples.
    pub fn small(seeds: Vec<u64>) -> Self {
        Self {
            n: 4,
            count: 10_000,
            res: ResConfig::default(),
            sgd: ResConfig::sgd_default(),
            budget_samples: 2_500,
            seeds,
            record_every_samples: 5,
        }
    }

    /// High-dimensional setting: `n = 40`, 3500 samples.
    pub fn large(seeds: Vec<u64>) -> Self {
        Self {
            n: 40,
            budget_samples: 3_500,
            ..Self::small(seeds)
        }
    }

    /// Returns `[res(seed₀), sgd(seed₀), res(seed₁), …]`.
    pub fn run(&self) -> Result<Vec<TrajectoryLog>> {
        let res_iters = iterations_for(self.budget_samples, &self.res)?;
        let sgd_iters = iterations_for(self.budget_samples, &self.sgd)?;
        if self.record_every_samples == 0 {
            return Err(Error::InvalidParameter(
                "record_every_samples must be positive".into(),
            ));
        }
        let per_seed: Vec<Result<[TrajectoryLog; 2]>> = self
            .seeds
            .par_iter()
            .map(|&seed| {
                let set = SyntheticSpec::new(self.n, self.count, seed).generate()?;
                let res_cfg = ResConfig {
                    seed,
                    max_iters: res_iters,
                    ..self.res.clone()
                };
                let sgd_cfg = ResConfig {
                    seed,
                    max_iters: sgd_iters,
                    ..self.sgd.clone()
                };
                let res = run(
                    &res_cfg,
                    &set,
                    Method::Res,
                    record_interval(self.record_every_samples, &res_cfg),
                )?;
                let sgd = run(
                    &sgd_cfg,
                    &set,
                    Method::Sgd,
                    record_interval(self.record_every_samples, &sgd_cfg),
                )?;
                Ok([res.trajectory, sgd.trajectory])
            })
            .collect();
        let mut logs = Vec::with_capacity(2 * self.seeds.len());
        for pair in per_seed {
            logs.extend(pair?);
        }
        Ok(logs)
    }
}

/// Width of the accuracy histogram bins.
pub const HISTOGRAM_BIN_WIDTH: f64 = 0.02;
const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistogramExperiment {
    pub n: usize,
    pub train_count: usize,
    pub test_count: usize,
    pub cfg: ResConfig,
    pub method: Method,
    pub replications: u64,
    pub base_seed: u64,
}

impl HistogramExperiment {
    /// Reduced scale: 100 replications, 1000 test samples.
    pub fn desk(method: Method, base_seed: u64) -> Self {
        let cfg = match method {
            Method::Res => ResConfig::default(),
            Method::Sgd => ResConfig::sgd_default(),
        };
        Self {
            n: 4,
            train_count: 2_500,
            test_count: 1_000,
            cfg,
            method,
            replications: 100,
            base_seed,
        }
    }

    /// 1000 replications, 10⁴ test samples.
    pub fn paper_scale(method: Method, base_seed: u64) -> Self {
        Self {
            test_count: 10_000,
            replications: 1_000,
            ..Self::desk(method, base_seed)
        }
    }

    /// Accuracy of replication `r` on its own test set, or the fault that stopped it.
    pub fn replicate(&self, r: u64) -> Result<(f64, Option<Fault>)> {
        let seed = self.base_seed.wrapping_add(r);
        let train = SyntheticSpec::new(self.n, self.train_count, seed).generate()?;
        let test_spec = SyntheticSpec::new(self.n, self.test_count, seed);
        let test = test_spec.generate_with(&mut rng::stream(seed, Stream::TestSet))?;
        let iters = iterations_for(self.train_count as u64, &self.cfg)?;
        let cfg = ResConfig {
            seed,
            max_iters: iters,
            ..self.cfg.clone()
        };
        let out = run(&cfg, &train, self.method, iters.max(1))?;
        match out.trajectory.fault {
            Some(fault) => Ok((0.0, Some(fault))),
            None => Ok((test.accuracy(&out.w)?, None)),
        }
    }

    pub fn run(&self) -> Result<HistogramResult> {
        if self.replications == 0 {
            return Err(Error::InvalidParameter(
                "replications must be at least 1".into(),
            ));
        }
        let outcomes: Vec<Result<(f64, Option<Fault>)>> = (0..self.replications)
            .into_par_iter()
            .map(|r| self.replicate(r))
            .collect();
        let mut accuracies = Vec::with_capacity(outcomes.len());
        let mut faulted = Vec::new();
        for (r, outcome) in outcomes.into_iter().enumerate() {
            let (acc, fault) = outcome?;
            if fault.is_some() {
                faulted.push(r as u64);
            }
            accuracies.push(acc);
        }
        Ok(HistogramResult::from_accuracies(
            accuracies,
            faulted,
            self.cfg.label(self.method),
            self.cfg.clone(),
            self.base_seed,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramResult {
    pub method: MethodLabel,
    pub accuracies: Vec<f64>,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub mean: f64,
    pub replications: u64,
    /// Replication indices that faulted (their accuracy is recorded as 0).
    pub faulted: Vec<u64>,
    pub config_snapshot: ResConfig,
    pub base_seed: u64,
}

impl HistogramResult {
    pub fn from_accuracies(
        accuracies: Vec<f64>,
        faulted: Vec<u64>,
        method: MethodLabel,
        config_snapshot: ResConfig,
        base_seed: u64,
    ) -> Self {
        let bin_edges: Vec<f64> = (0..=HISTOGRAM_BINS)
            .map(|k| k as f64 / HISTOGRAM_BINS as f64)
            .collect();
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        for &a in &accuracies {
            let bin = bin_edges
                .partition_point(|&edge| edge <= a)
                .saturating_sub(1);
            counts[bin.min(HISTOGRAM_BINS - 1)] += 1;
        }
        let mean = accuracies.iter().sum::<f64>() / accuracies.len().max(1) as f64;
        Self {
            method,
            replications: accuracies.len() as u64,
            accuracies,
            bin_edges,
            counts,
            mean,
            faulted,
            config_snapshot,
            base_seed,
        }
    }

    pub fn max(&self) -> f64 {
        self.accuracies
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Fraction of replications with accuracy strictly above `level`.
    pub fn fraction_above(&self, level: f64) -> f64 {
        let above = self.accuracies.iter().filter(|&&a| a > level).count();
        above as f64 / self.accuracies.len().max(1) as f64
    }
}

/// SGD, RES and unregularized stochastic BFGS on one shared training set,
/// all with a constant step size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationExperiment {
    pub n: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub budget_samples: u64,
    pub base_seed: u64,
    pub eps: f64,
    pub record_every_samples: u64,
}

impl AblationExperiment {
    pub fn new(base_seed: u64) -> Self {
        Self {
            n: 10,
            count: 10_000,
            budget_samples: 10_000,
            base_seed,
            eps: 1e-1,
            record_every_samples: 5,
        }
    }

    pub fn configs(&self) -> [(Method, ResConfig); 3] {
        let schedule = StepSchedule::Constant { eps: self.eps };
        let res = ResConfig {
            schedule,
            seed: self.base_seed,
            ..ResConfig::default()
        };
        let sgd = ResConfig {
            batch_size: 1,
            ..res.clone()
        };
        let unregularized = ResConfig {
            delta: 0.0,
            gamma: 0.0,
            ..res.clone()
        };
        [
            (Method::Sgd, sgd),
            (Method::Res, res),
            (Method::Res, unregularized),
        ]
    }

    /// Logs in the order SGD, RES, unregularized.
    pub fn run(&self) -> Result<Vec<TrajectoryLog>> {
        let set = SyntheticSpec::new(self.n, self.count, self.base_seed).generate()?;
        self.run_on(&set)
    }

    pub fn run_on(&self, set: &TrainingSet) -> Result<Vec<TrajectoryLog>> {
        self.configs()
            .into_par_iter()
            .map(|(method, cfg)| {
                let cfg = ResConfig {
                    max_iters: iterations_for(self.budget_samples, &cfg)?,
                    ..cfg
                };
                let every = record_interval(self.record_every_samples, &cfg);
                Ok(run(&cfg, set, method, every)?.trajectory)
            })
            .collect()
    }
}

/// Fraction of the sample budget excluded from excursion statistics.
pub const BURN_IN_FRACTION: f64 = 0.2;

/// Largest ratio of the objective to its running minimum after burn-in.
///
/// Faulted or non-finite traces report `f64::INFINITY`.
pub fn max_excursion_ratio(log: &TrajectoryLog, budget_samples: u64) -> f64 {
    if log.is_faulted() {
        return f64::INFINITY;
    }
    let burn_in = (budget_samples as f64 * BURN_IN_FRACTION) as u64;
    let mut running_min = f64::INFINITY;
    let mut worst = 0.0f64;
    for e in &log.entries {
        if !e.objective.is_finite() {
            return f64::INFINITY;
        }
        running_min = running_min.min(e.objective);
        if e.samples_processed >= burn_in {
            worst = worst.max(e.objective / running_min);
        }
    }
    worst
}

/// Largest objective value after burn-in.
pub fn max_post_burn_in(log: &TrajectoryLog, budget_samples: u64) -> f64 {
    let burn_in = (budget_samples as f64 * BURN_IN_FRACTION) as u64;
    log.entries
        .iter()
        .filter(|e| e.samples_processed >= burn_in)
        .map(|e| {
            if e.objective.is_nan() {
                f64::INFINITY
            } else {
                e.objective
            }
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

// ---------------------------------------------------------------------------
// Output

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

pub const TRAJECTORY_HEADER: &str = "method,seed,t,samples_processed,objective";
pub const HISTOGRAM_HEADER: &str = "bin_lo,bin_hi,count";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_trajectories(logs: &[TrajectoryLog], path: &Path, format: OutputFormat) -> Result<()> {
    let mut out = create(path)?;
    let result = match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut out, logs)?;
            writeln!(out).and_then(|_| out.flush())
        }
        OutputFormat::Csv => (|| {
            writeln!(out, "{TRAJECTORY_HEADER}")?;
            for log in logs {
                for e in &log.entries {
                    writeln!(
                        out,
                        "{},{},{},{},{}",
                        log.method,
                        log.seed,
                        e.t,
                        e.samples_processed,
                        fmt_f64(e.objective)
                    )?;
                }
            }
            out.flush()
        })(),
    };
    result.map_err(|e| Error::io(path, e))
}

/// One parsed row of a trajectory CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub method: MethodLabel,
    pub seed: u64,
    pub entry: TrajectoryEntry,
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let malformed = |line: usize, reason: String| Error::Malformed {
        path: path.to_path_buf(),
        line: line + 1,
        reason,
    };
    match lines.next() {
        Some((_, h)) if h == TRAJECTORY_HEADER => {}
        other => {
            return Err(malformed(
                0,
                format!("unexpected header {:?}", other.map(|(_, h)| h)),
            ))
        }
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(malformed(
                    i,
                    format!("expected 5 fields, found {}", fields.len()),
                ));
            }
            let int = |s: &str| s.parse::<u64>().map_err(|e| malformed(i, e.to_string()));
            Ok(TrajectoryRow {
                method: fields[0]
                    .parse()
                    .map_err(|e: Error| malformed(i, e.to_string()))?,
                seed: int(fields[1])?,
                entry: TrajectoryEntry {
                    t: int(fields[2])?,
                    samples_processed: int(fields[3])?,
                    objective: fields[4]
                        .parse()
                        .map_err(|_| malformed(i, format!("bad objective {:?}", fields[4])))?,
                },
            })
        })
        .collect()
}

/// Writes `bin_lo,bin_hi,count` rows (or the whole result as JSON), plus a
/// JSON sidecar next to a CSV with the mean, config and seeds.
pub fn write_histogram(hist: &HistogramResult, path: &Path, format: OutputFormat) -> Result<()> {
    let mut out = create(path)?;
    match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut out, hist)?;
            out.flush().map_err(|e| Error::io(path, e))
        }
        OutputFormat::Csv => {
            (|| {
                writeln!(out, "{HISTOGRAM_HEADER}")?;
                for (k, count) in hist.counts.iter().enumerate() {
                    writeln!(
                        out,
                        "{},{},{}",
                        fmt_f64(hist.bin_edges[k]),
                        fmt_f64(hist.bin_edges[k + 1]),
                        count
                    )?;
                }
                out.flush()
            })()
            .map_err(|e| Error::io(path, e))?;
            let sidecar = path.with_extension("json");
            let mut side = create(&sidecar)?;
            let seeds: Vec<u64> = (0..hist.replications)
                .map(|r| hist.base_seed.wrapping_add(r))
                .collect();
            let summary = serde_json::json!({
                "method": hist.method,
                "mean": hist.mean,
                "replications": hist.replications,
                "faulted": hist.faulted,
                "accuracies": hist.accuracies,
                "config": hist.config_snapshot,
                "seeds": seeds,
            });
            serde_json::to_writer_pretty(&mut side, &summary)?;
            side.flush().map_err(|e| Error::io(&sidecar, e))
        }
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub experiment: String,
    pub generator: String,
    pub parameters: serde_json::Value,
    pub files: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(experiment: &str, parameters: serde_json::Value) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: experiment.to_string(),
            generator: rng::GENERATOR_ID.to_string(),
            parameters,
            files: Vec::new(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = create(path)?;
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }
}

/// Writes `<outdir>/<experiment>/<method>_seed<k>.csv` per log and returns the file list.
pub fn write_experiment_logs(
    outdir: &Path,
    experiment: &str,
    logs: &[TrajectoryLog],
) -> Result<Vec<PathBuf>> {
    let dir = outdir.join(experiment);
    let mut files = Vec::with_capacity(logs.len());
    for log in logs {
        let path = dir.join(format!("{}_seed{}.csv", log.method, log.seed));
        write_trajectories(std::slice::from_ref(log), &path, OutputFormat::Csv)?;
        files.push(path);
    }
    Ok(files)
}
