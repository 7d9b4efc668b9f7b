//! Regularized stochastic BFGS (RES) and the plain SGD baseline.
//!
//! One RES iteration draws a minibatch, steps along `−ε_t (B⁻¹ + ΓI) ŝ`,
//! re-evaluates the minibatch gradient at the new point on the *same*
//! samples, and feeds the resulting `(v, r̂)` pair to the curvature update.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::curvature::{CurvaturePair, HessianApprox, UpdateOutcome};
use crate::dataset::TrainingSet;
use crate::error::{check_dim, Error, Result};
use crate::losses::{LossKind, Objective};
use crate::rng::{self, Stream, StreamRng};
use crate::trajectory::{Fault, MethodLabel, TrajectoryEntry, TrajectoryLog};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    /// `ε_t = ε₀·τ/(τ + t)`
    Decaying {
        eps0: f64,
        tau: f64,
    },
    Constant {
        eps: f64,
    },
}

impl StepSchedule {
    #[inline]
    pub fn step_size(&self, t: u64) -> f64 {
        match *self {
            StepSchedule::Decaying { eps0, tau } => eps0 * tau / (tau + t as f64),
            StepSchedule::Constant { eps } => eps,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            StepSchedule::Decaying { eps0, tau } => {
                eps0 > 0.0 && tau > 0.0 && eps0.is_finite() && tau.is_finite()
            }
            StepSchedule::Constant { eps } => eps > 0.0 && eps.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "step schedule parameters must be positive: {self:?}"
            )))
        }
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule::Decaying {
            eps0: 3e-2,
            tau: 100.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Res,
    Sgd,
}

/// Scalars of one run. JSON field names match the struct fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResConfig {
    pub lambda: f64,
    pub delta: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub schedule: StepSchedule,
    pub max_iters: u64,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for ResConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            delta: 1e-3,
            gamma: 1e-4,
            batch_size: 5,
            schedule: StepSchedule::default(),
            max_iters: 500,
            seed: 0,
            loss: LossKind::SquaredHinge,
        }
    }
}

impl ResConfig {
    /// SGD baseline with the same step sizes: `L = 1`.
    pub fn sgd_default() -> Self {
        Self {
            batch_size: 1,
            max_iters: 2500,
            ..Self::default()
        }
    }

    /// `δ = Γ = 0`: stochastic BFGS without regularization.
    pub fn is_unregularized(&self) -> bool {
        self.delta == 0.0 && self.gamma == 0.0
    }

    pub fn objective(&self) -> Objective {
        Objective {
            loss: self.loss,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be nonnegative, got {}", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be nonnegative, got {}", self.gamma));
        }
        if !self.delta.is_finite()
            || self.delta < 0.0
            || (self.delta == 0.0 && !self.is_unregularized())
        {
            return bad(format!(
                "delta must be positive (delta = gamma = 0 selects the unregularized mode), got {}",
                self.delta
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        self.schedule.validate()
    }

    pub fn label(&self, method: Method) -> MethodLabel {
        match method {
            Method::Sgd => MethodLabel::Sgd,
            Method::Res if self.is_unregularized() => MethodLabel::ResUnregularized,
            Method::Res => MethodLabel::Res,
        }
    }
}

/// What one RES iteration did to the curvature estimate.
#[derive(Debug, Clone)]
pub struct ResStep {
    pub step_size: f64,
    pub pair: CurvaturePair,
    pub outcome: UpdateOutcome,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub w: DVector<f64>,
    pub hessian: HessianApprox,
    pub t: u64,
    pub skip_count: u64,
    rng: StreamRng,
}

impl OptimizerState {
    /// Starts at `w₀ = 0` with the minibatch stream of `cfg.seed`.
    pub fn new(cfg: &ResConfig, dim: usize) -> Result<Self> {
        Self::with_start(cfg, DVector::zeros(dim))
    }

    pub fn with_start(cfg: &ResConfig, w0: DVector<f64>) -> Result<Self> {
        cfg.validate()?;
        if w0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial iterate".into()));
        }
        Ok(Self {
            hessian: HessianApprox::new(w0.len(), cfg.delta)?,
            w: w0,
            t: 0,
            skip_count: 0,
            rng: rng::stream(cfg.seed, Stream::Minibatch),
        })
    }

    fn check(&self, set: &TrainingSet) -> Result<()> {
        if set.is_empty() {
            return Err(Error::Empty("training set"));
        }
        check_dim(self.w.len(), set.dim())
    }

    fn accept(&mut self, next: DVector<f64>) -> Result<()> {
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("iterate after step {}", self.t)));
        }
        self.w = next;
        self.t += 1;
        Ok(())
    }

    pub fn res_step(&mut self, cfg: &ResConfig, set: &TrainingSet) -> Result<ResStep> {
        self.check(set)?;
        let objective = cfg.objective();
        let batch = set.sample_minibatch(cfg.batch_size, &mut self.rng)?;
        let step_size = cfg.schedule.step_size(self.t);

        let s = objective.instantaneous_gradient(&batch, &self.w)?;
        let direction = self.hessian.descent_direction(cfg.gamma, &s)?;
        let mut next = self.w.clone();
        next.axpy(-step_size, &direction, 1.0);
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("iterate after step {}", self.t)));
        }
        let s_next = objective.instantaneous_gradient(&batch, &next)?;

        let v = &next - &self.w;
        let r_hat = s_next - s;
        let outcome = self.hessian.update(&v, &r_hat)?;
        if outcome == UpdateOutcome::Skipped {
            self.skip_count += 1;
        }
        self.accept(next)?;
        Ok(ResStep {
            step_size,
            pair: CurvaturePair::new(v, r_hat, cfg.delta),
            outcome,
        })
    }

    pub fn sgd_step(&mut self, cfg: &ResConfig, set: &TrainingSet) -> Result<()> {
        self.check(set)?;
        let batch = set.sample_minibatch(cfg.batch_size, &mut self.rng)?;
        let s = cfg.objective().instantaneous_gradient(&batch, &self.w)?;
        let mut next = self.w.clone();
        next.axpy(-cfg.schedule.step_size(self.t), &s, 1.0);
        self.accept(next)
    }

    pub fn step(&mut self, method: Method, cfg: &ResConfig, set: &TrainingSet) -> Result<()> {
        match method {
            Method::Res => self.res_step(cfg, set).map(drop),
            Method::Sgd => self.sgd_step(cfg, set),
        }
    }
}

/// Outcome of [`run`]: the trace plus the last finite iterate.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trajectory: TrajectoryLog,
    pub w: DVector<f64>,
    pub hessian: Option<HessianApprox>,
    pub skip_count: u64,
}

/// Runs `cfg.max_iters` iterations from the origin, recording `F(w_t)`
/// every `record_every` iterations and at the last one.
///
/// Non-finite iterates and factorization failures end the run early and are
/// stored in [`TrajectoryLog::fault`]; only invalid arguments return `Err`.
pub fn run(
    cfg: &ResConfig,
    set: &TrainingSet,
    method: Method,
    record_every: u64,
) -> Result<RunOutput> {
    if record_every == 0 {
        return Err(Error::InvalidParameter(
            "record_every must be at least 1".into(),
        ));
    }
    let objective = cfg.objective();
    let mut state = OptimizerState::new(cfg, set.dim())?;
    state.check(set)?;
    let batch = cfg.batch_size as u64;
    let mut log = TrajectoryLog {
        method: cfg.label(method),
        entries: Vec::new(),
        config_snapshot: cfg.clone(),
        seed: cfg.seed,
        fault: None,
    };
    let record = |state: &OptimizerState, log: &mut TrajectoryLog| -> Result<()> {
        let value = objective.average_objective(set, &state.w)?;
        log.entries.push(TrajectoryEntry {
            t: state.t,
            samples_processed: batch * state.t,
            objective: value,
        });
        if !value.is_finite() && log.fault.is_none() {
            log.fault = Some(Fault {
                iteration: state.t,
                reason: format!("objective is {value}"),
            });
        }
        Ok(())
    };

    record(&state, &mut log)?;
    while state.t < cfg.max_iters && log.fault.is_none() {
        match state.step(method, cfg, set) {
            Ok(()) => {
                if state.t % record_every == 0 || state.t == cfg.max_iters {
                    record(&state, &mut log)?;
                }
            }
            Err(e) if e.is_fault() => {
                if log.entries.last().map(|e| e.t) != Some(state.t) {
                    record(&state, &mut log)?;
                }
                log.fault = Some(Fault {
                    iteration: state.t,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(RunOutput {
        trajectory: log,
        w: state.w,
        hessian: (method == Method::Res).then_some(state.hessian),
        skip_count: state.skip_count,
    })
}

/// Whether `2·ε₀·τ·Γ > 1`, the step-size condition of the expected-rate bound.
pub fn check_rate_condition(eps0: f64, tau: f64, gamma: f64) -> bool {
    2.0 * eps0 * tau * gamma > 1.0
}

/// `ξ/(τ + t)` with `ξ = max{ε₀²τ²K/(2ε₀τΓ − 1), (1 + τ)·(F(w₀) − F*)}`.
///
/// `k` is the problem constant of the bound; it has no closed form here and
/// must be supplied by the caller.
pub fn rate_bound(eps0: f64, tau: f64, gamma: f64, k: f64, f0_gap: f64, t: u64) -> Result<f64> {
    if !check_rate_condition(eps0, tau, gamma) {
        return Err(Error::InvalidParameter(format!(
            "rate condition 2*eps0*tau*gamma > 1 fails: {}",
            2.0 * eps0 * tau * gamma
        )));
    }
    if !(k >= 0.0 && f0_gap >= 0.0) {
        return Err(Error::InvalidParameter(
            "K and the initial gap must be nonnegative".into(),
        ));
    }
    let xi = f64::max(
        eps0 * eps0 * tau * tau * k / (2.0 * eps0 * tau * gamma - 1.0),
        (1.0 + tau) * f0_gap,
    );
    Ok(xi / (tau + t as f64))
}

/// Empirical stand-ins for the curvature and gradient-moment constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceDiagnostics {
    pub m_tilde: f64,
    #[serde(rename = "M_tilde")]
    pub big_m_tilde: f64,
    pub s_sq_estimate: f64,
    pub rate_condition_ok: bool,
}

/// Half-width of the box the probe iterates are drawn from.
pub const PROBE_RADIUS: f64 = 2.0;

/// Probes random iterates in `[−PROBE_RADIUS, PROBE_RADIUS]ⁿ` with random
/// minibatches. `m̃` is the regularization floor `λ`; `M̃` is the largest
/// minibatch Hessian eigenvalue seen; `S²` the largest `‖ŝ‖²`. Advisory only.
pub fn estimate_diagnostics<R: Rng + ?Sized>(
    cfg: &ResConfig,
    set: &TrainingSet,
    probe_points: usize,
    rng: &mut R,
) -> Result<ConvergenceDiagnostics> {
    cfg.validate()?;
    if probe_points == 0 {
        return Err(Error::InvalidParameter(
            "probe_points must be at least 1".into(),
        ));
    }
    if set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let objective = cfg.objective();
    let n = set.dim();
    let mut max_curvature = 0.0f64;
    let mut s_sq = 0.0f64;
    for _ in 0..probe_points {
        let w = DVector::from_fn(n, |_, _| rng.random_range(-PROBE_RADIUS..PROBE_RADIUS));
        let batch = set.sample_minibatch(cfg.batch_size, rng)?;
        s_sq = s_sq.max(objective.instantaneous_gradient(&batch, &w)?.norm_squared());

        let mut curvature = DMatrix::<f64>::zeros(n, n);
        let mut active = false;
        for sample in &batch {
            let margin = sample.y.as_f64() * w.dot(&sample.x);
            let weight = match cfg.loss {
                LossKind::SquaredHinge => {
                    if margin < 1.0 {
                        2.0
                    } else {
                        0.0
                    }
                }
                LossKind::Log => {
                    let p = 1.0 / (1.0 + margin.exp());
                    p * (1.0 - p)
                }
            };
            if weight > 0.0 {
                active = true;
                curvature.ger(weight, &sample.x, &sample.x, 1.0);
            }
        }
        if active {
            curvature /= batch.len() as f64;
            let top = SymmetricEigen::new(curvature).eigenvalues.max();
            max_curvature = max_curvature.max(top);
        }
    }
    let (eps0, tau) = match cfg.schedule {
        StepSchedule::Decaying { eps0, tau } => (eps0, tau),
        StepSchedule::Constant { .. } => (0.0, 0.0),
    };
    Ok(ConvergenceDiagnostics {
        m_tilde: cfg.lambda,
        big_m_tilde: cfg.lambda + max_curvature,
        s_sq_estimate: s_sq,
        rate_condition_ok: check_rate_condition(eps0, tau, cfg.gamma),
    })
}
