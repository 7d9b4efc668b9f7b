//! Per-run objective traces.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::optimizer::ResConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodLabel {
    Res,
    Sgd,
    ResUnregularized,
}

impl MethodLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            MethodLabel::Res => "res",
            MethodLabel::Sgd => "sgd",
            MethodLabel::ResUnregularized => "res_unregularized",
        }
    }
}

impl fmt::Display for MethodLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "res" => Ok(MethodLabel::Res),
            "sgd" => Ok(MethodLabel::Sgd),
            "res_unregularized" => Ok(MethodLabel::ResUnregularized),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    pub t: u64,
    pub samples_processed: u64,
    pub objective: f64,
}

/// Why and where a run stopped early.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fault {
    pub iteration: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub method: MethodLabel,
    pub entries: Vec<TrajectoryEntry>,
    pub config_snapshot: ResConfig,
    pub seed: u64,
    pub fault: Option<Fault>,
}

impl TrajectoryLog {
    pub fn final_objective(&self) -> Option<f64> {
        self.entries.last().map(|e| e.objective)
    }

    /// Samples processed when the objective first drops to `level` or below.
    pub fn samples_to_reach(&self, level: f64) -> Option<u64> {
        self.entries
            .iter()
            .find(|e| e.objective <= level)
            .map(|e| e.samples_processed)
    }

    pub fn is_faulted(&self) -> bool {
        self.fault.is_some()
    }
}
