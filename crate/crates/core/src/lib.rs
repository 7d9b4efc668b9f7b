//! Regularized stochastic BFGS (RES) for training linear support vector
//! machines, an SGD baseline, a synthetic two-class data generator, and
//! seeded experiment recipes comparing them.

pub mod cli;
pub mod curvature;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod losses;
pub mod optimizer;
pub mod rng;
pub mod trajectory;

pub use curvature::{CurvaturePair, HessianApprox, UpdateOutcome};
pub use dataset::{clairvoyant_accuracy, Label, Sample, SyntheticSpec, TrainingSet};
pub use error::{Error, Result};
pub use losses::{LossKind, Objective};
pub use optimizer::{
    check_rate_condition, estimate_diagnostics, rate_bound, run, ConvergenceDiagnostics, Method,
    OptimizerState, ResConfig, RunOutput, StepSchedule,
};
pub use trajectory::{MethodLabel, TrajectoryEntry, TrajectoryLog};
