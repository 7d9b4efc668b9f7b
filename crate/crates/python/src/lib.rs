//! Python bindings for `res-core`.
//!
//! Vectors cross the boundary as lists of floats, matrices as lists of rows.
//! Configs, histograms and manifests are exchanged as JSON-compatible dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nalgebra::{DMatrix, DVector};
use res_core::dataset::Interval;
use res_core::experiments::{self, AblationExperiment, ConvergenceExperiment, HistogramExperiment};
use res_core::{
    Error, HessianApprox, Label, LossKind, Method, Objective, ResConfig, Sample, StepSchedule,
    SyntheticSpec, TrainingSet, TrajectoryLog, UpdateOutcome,
};

pub fn to_pyerr(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_fault() => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py_json<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(json_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py_json<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj
        .py()
        .import("json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(json_err)
}

fn parse_loss(name: &str) -> PyResult<LossKind> {
    name.parse()
        .map_err(|_| PyValueError::new_err(format!("unknown loss {name:?}")))
}

fn parse_method(name: &str) -> PyResult<Method> {
    match name {
        "res" => Ok(Method::Res),
        "sgd" => Ok(Method::Sgd),
        other => Err(PyValueError::new_err(format!(
            "unknown method {other:?}, expected \"res\" or \"sgd\""
        ))),
    }
}

fn parse_label(y: i64) -> PyResult<Label> {
    Label::from_i64(y)
        .ok_or_else(|| PyValueError::new_err(format!("label must be -1 or 1, got {y}")))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A set of labelled feature vectors.
#[pyclass(name = "TrainingSet", module = "res_svm", frozen)]
pub struct PyTrainingSet {
    pub inner: TrainingSet,
}

#[pymethods]
impl PyTrainingSet {
    #[new]
    fn new(features: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<Self> {
        if features.len() != labels.len() {
            return Err(PyValueError::new_err(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let samples = features
            .into_iter()
            .zip(labels)
            .map(|(x, y)| Sample::new(DVector::from_vec(x), parse_label(y)?).map_err(to_pyerr))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self {
            inner: TrainingSet::new(samples).map_err(to_pyerr)?,
        })
    }

    /// Draws `count` points in dimension `n` from the two-box model.
    #[staticmethod]
    #[pyo3(signature = (n, count, seed=0, neg_interval=None, pos_interval=None))]
    fn generate(
        n: usize,
        count: usize,
        seed: u64,
        neg_interval: Option<(f64, f64)>,
        pos_interval: Option<(f64, f64)>,
    ) -> PyResult<Self> {
        let mut spec = SyntheticSpec::new(n, count, seed);
        if let Some((a, b)) = neg_interval {
            spec.neg_interval = Interval(a, b);
        }
        if let Some((a, b)) = pos_interval {
            spec.pos_interval = Interval(a, b);
        }
        Ok(Self {
            inner: spec.generate().map_err(to_pyerr)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (path, header=false))]
    fn load_csv(path: PathBuf, header: bool) -> PyResult<Self> {
        Ok(Self {
            inner: TrainingSet::load_csv(&path, header).map_err(to_pyerr)?,
        })
    }

    #[pyo3(signature = (path, header=false))]
    fn save_csv(&self, path: PathBuf, header: bool) -> PyResult<()> {
        self.inner.save_csv(&path, header).map_err(to_pyerr)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn features(&self) -> Vec<Vec<f64>> {
        self.inner
            .samples()
            .iter()
            .map(|s| s.x.iter().copied().collect())
            .collect()
    }

    fn labels(&self) -> Vec<i64> {
        self.inner
            .samples()
            .iter()
            .map(|s| s.y.as_f64() as i64)
            .collect()
    }

    fn accuracy(&self, w: Vec<f64>) -> PyResult<f64> {
        self.inner.accuracy(&DVector::from_vec(w)).map_err(to_pyerr)
    }

    /// Regularized average loss at `w`.
    #[pyo3(signature = (w, lam=1e-3, loss="squared_hinge"))]
    fn objective(&self, w: Vec<f64>, lam: f64, loss: &str) -> PyResult<f64> {
        let obj = Objective::new(parse_loss(loss)?, lam).map_err(to_pyerr)?;
        obj.average_objective(&self.inner, &DVector::from_vec(w))
            .map_err(to_pyerr)
    }

    #[pyo3(signature = (w, lam=1e-3, loss="squared_hinge"))]
    fn gradient(&self, w: Vec<f64>, lam: f64, loss: &str) -> PyResult<Vec<f64>> {
        let obj = Objective::new(parse_loss(loss)?, lam).map_err(to_pyerr)?;
        let g = obj
            .full_gradient(&self.inner, &DVector::from_vec(w))
            .map_err(to_pyerr)?;
        Ok(g.as_slice().to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "TrainingSet(len={}, dim={})",
            self.inner.len(),
            self.inner.dim()
        )
    }
}

/// Regularized curvature matrix B.
#[pyclass(name = "HessianApprox", module = "res_svm")]
pub struct PyHessianApprox {
    pub inner: HessianApprox,
}

#[pymethods]
impl PyHessianApprox {
    #[new]
    #[pyo3(signature = (n, delta=1e-3))]
    fn new(n: usize, delta: f64) -> PyResult<Self> {
        Ok(Self {
            inner: HessianApprox::new(n, delta).map_err(to_pyerr)?,
        })
    }

    #[staticmethod]
    fn from_matrix(matrix: Vec<Vec<f64>>, delta: f64) -> PyResult<Self> {
        let n = matrix.len();
        if matrix.iter().any(|r| r.len() != n) {
            return Err(PyValueError::new_err("matrix must be square"));
        }
        let b = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
        Ok(Self {
            inner: HessianApprox::from_matrix(b, delta).map_err(to_pyerr)?,
        })
    }

    /// Applies one update; returns False when the pair was skipped.
    fn update(&mut self, v: Vec<f64>, r_hat: Vec<f64>) -> PyResult<bool> {
        let outcome = self
            .inner
            .update(&DVector::from_vec(v), &DVector::from_vec(r_hat))
            .map_err(to_pyerr)?;
        Ok(outcome == UpdateOutcome::Updated)
    }

    /// (B^-1 + gamma I) s
    fn descent_direction(&self, gamma: f64, s: Vec<f64>) -> PyResult<Vec<f64>> {
        let d = self
            .inner
            .descent_direction(gamma, &DVector::from_vec(s))
            .map_err(to_pyerr)?;
        Ok(d.as_slice().to_vec())
    }

    fn min_eigenvalue(&self) -> f64 {
        self.inner.min_eigenvalue()
    }

    fn matrix(&self) -> Vec<Vec<f64>> {
        rows(self.inner.matrix())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta()
    }
}

/// Optimizer hyperparameters.
#[pyclass(name = "ResConfig", module = "res_svm", from_py_object)]
#[derive(Clone)]
pub struct PyResConfig {
    pub inner: ResConfig,
}

#[pymethods]
impl PyResConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        match kwargs {
            None => Ok(Self {
                inner: ResConfig::default(),
            }),
            Some(d) => Self::from_dict(d.as_any()),
        }
    }

    /// Paper defaults for the SGD baseline (batch size 1).
    #[staticmethod]
    fn sgd_default() -> Self {
        Self {
            inner: ResConfig::sgd_default(),
        }
    }

    /// Builds a config from a dict; missing keys take the RES defaults.
    #[staticmethod]
    fn from_dict(d: &Bound<'_, PyAny>) -> PyResult<Self> {
        let inner: ResConfig = from_py_json(d)?;
        inner.validate().map_err(to_pyerr)?;
        Ok(Self { inner })
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py_json(py, &self.inner)
    }

    fn with_constant_step(&self, eps: f64) -> Self {
        let mut inner = self.inner.clone();
        inner.schedule = StepSchedule::Constant { eps };
        Self { inner }
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.inner.lambda
    }

    #[getter]
    fn delta(&self) -> f64 {
        self.inner.delta
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }

    #[getter]
    fn batch_size(&self) -> usize {
        self.inner.batch_size
    }

    #[getter]
    fn max_iters(&self) -> u64 {
        self.inner.max_iters
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn step_size(&self, t: u64) -> f64 {
        self.inner.schedule.step_size(t)
    }

    fn __repr__(&self) -> String {
        format!(
            "ResConfig({})",
            serde_json::to_string(&self.inner).unwrap_or_default()
        )
    }
}

/// Objective values recorded along one run.
#[pyclass(name = "Trajectory", module = "res_svm", frozen)]
pub struct PyTrajectory {
    pub inner: TrajectoryLog,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn t(&self) -> Vec<u64> {
        self.inner.entries.iter().map(|e| e.t).collect()
    }

    #[getter]
    fn samples_processed(&self) -> Vec<u64> {
        self.inner
            .entries
            .iter()
            .map(|e| e.samples_processed)
            .collect()
    }

    #[getter]
    fn objective(&self) -> Vec<f64> {
        self.inner.entries.iter().map(|e| e.objective).collect()
    }

    #[getter]
    fn fault(&self) -> Option<String> {
        self.inner
            .fault
            .as_ref()
            .map(|f| format!("iteration {}: {}", f.iteration, f.reason))
    }

    #[getter]
    fn config(&self) -> PyResConfig {
        PyResConfig {
            inner: self.inner.config_snapshot.clone(),
        }
    }

    fn final_objective(&self) -> Option<f64> {
        self.inner.final_objective()
    }

    fn samples_to_reach(&self, level: f64) -> Option<u64> {
        self.inner.samples_to_reach(level)
    }

    fn __len__(&self) -> usize {
        self.inner.entries.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(method={}, seed={}, entries={}, final={:?})",
            self.inner.method.as_str(),
            self.inner.seed,
            self.inner.entries.len(),
            self.inner.final_objective()
        )
    }
}

/// Result of `train`: trajectory, final weights and (for RES) the final B.
#[pyclass(name = "RunResult", module = "res_svm", frozen)]
pub struct PyRunResult {
    #[pyo3(get)]
    pub trajectory: Py<PyTrajectory>,
    #[pyo3(get)]
    pub w: Vec<f64>,
    #[pyo3(get)]
    pub skip_count: u64,
    pub hessian: Option<DMatrix<f64>>,
}

#[pymethods]
impl PyRunResult {
    fn hessian(&self) -> Option<Vec<Vec<f64>>> {
        self.hessian.as_ref().map(rows)
    }
}

/// Runs RES or SGD from w = 0 for `config.max_iters` iterations.
#[pyfunction]
#[pyo3(signature = (config, data, method="res", record_every=1))]
fn train(
    py: Python<'_>,
    config: &PyResConfig,
    data: &PyTrainingSet,
    method: &str,
    record_every: u64,
) -> PyResult<PyRunResult> {
    let method = parse_method(method)?;
    let out = py
        .detach(|| res_core::run(&config.inner, &data.inner, method, record_every))
        .map_err(to_pyerr)?;
    Ok(PyRunResult {
        trajectory: Py::new(
            py,
            PyTrajectory {
                inner: out.trajectory,
            },
        )?,
        w: out.w.as_slice().to_vec(),
        skip_count: out.skip_count,
        hessian: out.hessian.map(HessianApprox::into_matrix),
    })
}

#[pyfunction]
#[pyo3(signature = (x, y, w, loss="squared_hinge"))]
fn loss_value(x: Vec<f64>, y: i64, w: Vec<f64>, loss: &str) -> PyResult<f64> {
    parse_loss(loss)?
        .value(
            &DVector::from_vec(x),
            parse_label(y)?,
            &DVector::from_vec(w),
        )
        .map_err(to_pyerr)
}

#[pyfunction]
#[pyo3(signature = (x, y, w, loss="squared_hinge"))]
fn loss_gradient(x: Vec<f64>, y: i64, w: Vec<f64>, loss: &str) -> PyResult<Vec<f64>> {
    let g = parse_loss(loss)?
        .gradient(
            &DVector::from_vec(x),
            parse_label(y)?,
            &DVector::from_vec(w),
        )
        .map_err(to_pyerr)?;
    Ok(g.as_slice().to_vec())
}

/// Bayes-optimal accuracy of the two-box model in dimension `n`.
#[pyfunction]
fn clairvoyant_accuracy(n: usize) -> PyResult<f64> {
    res_core::clairvoyant_accuracy(n).map_err(to_pyerr)
}

#[pyfunction]
fn check_rate_condition(eps0: f64, tau: f64, gamma: f64) -> bool {
    res_core::check_rate_condition(eps0, tau, gamma)
}

#[pyfunction]
fn rate_bound(eps0: f64, tau: f64, gamma: f64, k: f64, f0_gap: f64, t: u64) -> PyResult<f64> {
    res_core::rate_bound(eps0, tau, gamma, k, f0_gap, t).map_err(to_pyerr)
}

fn wrap_logs(py: Python<'_>, logs: Vec<TrajectoryLog>) -> PyResult<Vec<Py<PyTrajectory>>> {
    logs.into_iter()
        .map(|inner| Py::new(py, PyTrajectory { inner }))
        .collect()
}

/// Convergence comparison; `setting` is "small" (n=4) or "large" (n=40).
/// Returns trajectories ordered [res, sgd] per seed.
#[pyfunction]
#[pyo3(signature = (setting="small", seeds=None))]
fn convergence_experiment(
    py: Python<'_>,
    setting: &str,
    seeds: Option<Vec<u64>>,
) -> PyResult<Vec<Py<PyTrajectory>>> {
    let seeds = seeds.unwrap_or_else(|| (0..10).collect());
    let exp = match setting {
        "small" => ConvergenceExperiment::small(seeds),
        "large" => ConvergenceExperiment::large(seeds),
        other => return Err(PyValueError::new_err(format!("unknown setting {other:?}"))),
    };
    let logs = py.detach(|| exp.run()).map_err(to_pyerr)?;
    wrap_logs(py, logs)
}

/// Test-accuracy histogram over independent replications, as a dict.
#[pyfunction]
#[pyo3(signature = (method="res", replications=100, base_seed=0))]
fn histogram_experiment<'py>(
    py: Python<'py>,
    method: &str,
    replications: u64,
    base_seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let mut exp = HistogramExperiment::desk(parse_method(method)?, base_seed);
    exp.replications = replications;
    let hist = py.detach(|| exp.run()).map_err(to_pyerr)?;
    to_py_json(py, &hist)
}

/// Constant-step comparison of SGD, RES and unregularized RES on one seed.
#[pyfunction]
#[pyo3(signature = (base_seed=0))]
fn ablation_experiment(py: Python<'_>, base_seed: u64) -> PyResult<Vec<Py<PyTrajectory>>> {
    let exp = AblationExperiment::new(base_seed);
    let logs = py.detach(|| exp.run()).map_err(to_pyerr)?;
    wrap_logs(py, logs)
}

/// Largest post-burn-in ratio of the objective to its running minimum.
#[pyfunction]
fn max_excursion_ratio(trajectory: &PyTrajectory, budget_samples: u64) -> f64 {
    experiments::max_excursion_ratio(&trajectory.inner, budget_samples)
}

#[pymodule]
pub fn res_svm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTrainingSet>()?;
    m.add_class::<PyHessianApprox>()?;
    m.add_class::<PyResConfig>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(loss_value, m)?)?;
    m.add_function(wrap_pyfunction!(loss_gradient, m)?)?;
    m.add_function(wrap_pyfunction!(clairvoyant_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(check_rate_condition, m)?)?;
    m.add_function(wrap_pyfunction!(rate_bound, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(histogram_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(ablation_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(max_excursion_ratio, m)?)?;
    Ok(())
}
