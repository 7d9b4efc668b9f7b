//! Curvature estimate for the regularized stochastic BFGS iteration.
//!
//! The matrix `B` is updated with the corrected variation `r̃ = r̂ − δv`:
//!
//! ```text
//! B⁺ = B + r̃r̃ᵀ/(vᵀr̃) − (Bv)(Bv)ᵀ/(vᵀBv) + δI
//! ```
//!
//! which satisfies the secant condition `B⁺v = r̂` and keeps every eigenvalue
//! of `B⁺` at or above `δ` whenever `r̃ᵀv > 0`. With `δ = 0` this is the
//! textbook BFGS update of the Hessian approximation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::dataset::fmt_f64;
use crate::error::{check_dim, Error, Result};

/// Relative guard on `r̃ᵀv` used when `δ > 0`.
pub const SKIP_RELATIVE: f64 = 1e-10;
/// Absolute guard on `r̃ᵀv` used in the unregularized (`δ = 0`) mode.
pub const SKIP_ABSOLUTE_UNREGULARIZED: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Updated,
    Skipped,
}

/// The pair that fed an update, kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvaturePair {
    pub v: DVector<f64>,
    pub r_hat: DVector<f64>,
    pub r_tilde: DVector<f64>,
}

impl CurvaturePair {
    pub fn new(v: DVector<f64>, r_hat: DVector<f64>, delta: f64) -> Self {
        let r_tilde = &r_hat - &v * delta;
        Self { v, r_hat, r_tilde }
    }

    /// `r̃ᵀv`, the quantity the skip rule tests.
    pub fn curvature(&self) -> f64 {
        self.r_tilde.dot(&self.v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HessianApprox {
    b: DMatrix<f64>,
    delta: f64,
}

impl HessianApprox {
    /// `B₀ = max(1, 2δ)·I`, strictly above the floor for every `δ`.
    ///
    /// `δ = 0` is accepted and selects the unregularized update.
    pub fn new(n: usize, delta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "dimension must be at least 1".into(),
            ));
        }
        check_delta(delta)?;
        let scale = f64::max(1.0, 2.0 * delta);
        Ok(Self {
            b: DMatrix::identity(n, n) * scale,
            delta,
        })
    }

    /// Wraps an existing matrix, which must be symmetric with spectrum at or above `delta`.
    pub fn from_matrix(b: DMatrix<f64>, delta: f64) -> Result<Self> {
        check_delta(delta)?;
        if !b.is_square() || b.nrows() == 0 {
            return Err(Error::InvalidParameter(
                "curvature matrix must be square and nonempty".into(),
            ));
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curvature matrix".into()));
        }
        let asym = (&b - b.transpose()).amax();
        if asym > 1e-12 * b.amax().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "matrix is not symmetric (max |B - Bᵀ| = {asym})"
            )));
        }
        let h = Self { b, delta };
        let floor = h.min_eigenvalue();
        if floor < delta - 1e-9 || floor <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "smallest eigenvalue {floor} is below the floor {delta}"
            )));
        }
        Ok(h)
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.b
    }

    fn guard_threshold(&self, v_norm_sq: f64) -> f64 {
        if self.delta > 0.0 {
            SKIP_RELATIVE * v_norm_sq
        } else {
            SKIP_ABSOLUTE_UNREGULARIZED
        }
    }

    /// Applies the regularized BFGS update for the pair `(v, r̂)`.
    ///
    /// Leaves `B` untouched and reports [`UpdateOutcome::Skipped`] when
    /// `r̃ᵀv` fails the guard or `v = 0`.
    pub fn update(&mut self, v: &DVector<f64>, r_hat: &DVector<f64>) -> Result<UpdateOutcome> {
        check_dim(self.dim(), v.len())?;
        check_dim(self.dim(), r_hat.len())?;
        if v.iter().chain(r_hat.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("curvature pair".into()));
        }
        let v_norm_sq = v.norm_squared();
        if v_norm_sq == 0.0 {
            return Ok(UpdateOutcome::Skipped);
        }
        let r_tilde = r_hat - v * self.delta;
        let curvature = r_tilde.dot(v);
        // NaN curvature must skip too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(curvature > self.guard_threshold(v_norm_sq)) {
            return Ok(UpdateOutcome::Skipped);
        }
        let bv = &self.b * v;
        let vbv = v.dot(&bv);
        if !(vbv > 0.0 && vbv.is_finite()) {
            return Ok(UpdateOutcome::Skipped);
        }

        let mut next = self.b.clone();
        next.ger(1.0 / curvature, &r_tilde, &r_tilde, 1.0);
        next.ger(-1.0 / vbv, &bv, &bv, 1.0);
        for i in 0..next.nrows() {
            next[(i, i)] += self.delta;
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("curvature update".into()));
        }
        let symmetric = (&next + next.transpose()) * 0.5;
        self.b = symmetric;
        Ok(UpdateOutcome::Updated)
    }

    /// `(B⁻¹ + ΓI)·s`, solving with a fresh Cholesky factorization of `B`.
    pub fn descent_direction(&self, gamma: f64, s: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), s.len())?;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must be nonnegative, got {gamma}"
            )));
        }
        let chol = Cholesky::new(self.b.clone()).ok_or(Error::Factorization)?;
        let mut d = chol.solve(s);
        d.axpy(gamma, s, 1.0);
        Ok(d)
    }

    /// Smallest eigenvalue of `B`.
    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.b.clone()).eigenvalues.min()
    }

    /// Row-major decimal dump for auditing.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let write = |out: &mut BufWriter<File>| -> std::io::Result<()> {
            for row in self.b.row_iter() {
                let line: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
                writeln!(out, "{}", line.join(","))?;
            }
            out.flush()
        };
        write(&mut out).map_err(|e| Error::io(path, e))
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta >= 0.0 && delta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "delta must be finite and nonnegative, got {delta}"
        )))
    }
}
