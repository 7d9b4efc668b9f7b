//! Per-sample classification losses and the regularized SVM objective
//!
//! `F(w) = (λ/2)‖w‖² + (1/N) Σ l((xᵢ, yᵢ); w)` over a training set, and its
//! minibatch gradient `λw + (1/L) Σ ∇l`. The model is homogeneous: there is
//! no intercept term.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::{Label, Sample, TrainingSet};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `max(0, 1 − y·wᵀx)²`
    #[default]
    SquaredHinge,
    /// `log(1 + exp(−y·wᵀx))`
    Log,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::SquaredHinge => "squared_hinge",
            LossKind::Log => "log",
        }
    }

    /// Loss as a function of the signed margin `m = y·wᵀx`.
    #[inline]
    pub fn value_at_margin(self, margin: f64) -> f64 {
        match self {
            LossKind::SquaredHinge => {
                let slack = (1.0 - margin).max(0.0);
                slack * slack
            }
            LossKind::Log => softplus(-margin),
        }
    }

    /// Derivative of the loss with respect to the margin.
    #[inline]
    pub fn margin_derivative(self, margin: f64) -> f64 {
        match self {
            LossKind::SquaredHinge => -2.0 * (1.0 - margin).max(0.0),
            LossKind::Log => -logistic(-margin),
        }
    }

    pub fn value(self, x: &DVector<f64>, y: Label, w: &DVector<f64>) -> Result<f64> {
        check_dim(w.len(), x.len())?;
        Ok(self.value_at_margin(y.as_f64() * w.dot(x)))
    }

    pub fn gradient(self, x: &DVector<f64>, y: Label, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(w.len(), x.len())?;
        let yf = y.as_f64();
        Ok(x * (yf * self.margin_derivative(yf * w.dot(x))))
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared_hinge" => Ok(LossKind::SquaredHinge),
            "log" => Ok(LossKind::Log),
            other => Err(Error::InvalidParameter(format!("unknown loss {other:?}"))),
        }
    }
}

/// `log(1 + exp(z))` without overflow for large `|z|`.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// The regularized objective `f(w, θ) = (λ/2)‖w‖² + l(θ; w)` and its average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub loss: LossKind,
    pub lambda: f64,
}

impl Objective {
    pub fn new(loss: LossKind, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and nonnegative, got {lambda}"
            )));
        }
        Ok(Self { loss, lambda })
    }

    /// Minibatch gradient `λw + (1/L) Σᵢ ∇l((xᵢ, yᵢ); w)`.
    pub fn instantaneous_gradient(
        &self,
        batch: &[&Sample],
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        if batch.is_empty() {
            return Err(Error::Empty("minibatch"));
        }
        let mut acc = DVector::zeros(w.len());
        for sample in batch {
            check_dim(w.len(), sample.x.len())?;
            let y = sample.y.as_f64();
            let coeff = y * self.loss.margin_derivative(y * w.dot(&sample.x));
            if coeff != 0.0 {
                acc.axpy(coeff, &sample.x, 1.0);
            }
        }
        acc /= batch.len() as f64;
        acc.axpy(self.lambda, w, 1.0);
        Ok(acc)
    }

    /// Exact `F(w)` over the whole set. Reporting only; the optimizer never calls it.
    pub fn average_objective(&self, set: &TrainingSet, w: &DVector<f64>) -> Result<f64> {
        if set.is_empty() {
            return Err(Error::Empty("training set"));
        }
        check_dim(set.dim(), w.len())?;
        let total: f64 = set
            .samples()
            .iter()
            .map(|s| self.loss.value_at_margin(s.y.as_f64() * w.dot(&s.x)))
            .sum();
        Ok(0.5 * self.lambda * w.norm_squared() + total / set.len() as f64)
    }

    /// Gradient of [`Objective::average_objective`].
    pub fn full_gradient(&self, set: &TrainingSet, w: &DVector<f64>) -> Result<DVector<f64>> {
        let batch: Vec<&Sample> = set.samples().iter().collect();
        self.instantaneous_gradient(&batch, w)
    }
}
