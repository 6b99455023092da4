//! Least-squares sieve projection onto the instrument span.
//!
//! Fitted values are `Phi (Phi'Phi)^-1 Phi' B`, the sample conditional
//! expectation of `B` given `(Z, A, X)`.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, SV_RTOL};

/// Reciprocal condition number below which the Gram matrix is ridge-stabilized.
pub const RCOND_MIN: f64 = 1e-12;
/// Relative ridge `eps` in `eps * tr(Phi'Phi) / k`.
pub const RIDGE_EPS: f64 = 1e-8;

/// Factored instrument design, reusable across targets.
#[derive(Debug, Clone)]
pub struct Projector {
    phi: DMatrix<f64>,
    pub gram_inverse: DMatrix<f64>,
    pub ridge_used: f64,
    /// Reciprocal condition number of `Phi'Phi` before any ridge.
    pub rcond: f64,
    /// Smallest eigenvalue of `Phi'Phi / n`.
    pub min_eigen: f64,
    /// Set when the Gram matrix was numerically singular.
    pub rank_flag: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionModel {
    pub gram_inverse: DMatrix<f64>,
    /// `k x t` coefficients, one column per target.
    pub coefficients: DMatrix<f64>,
    pub ridge_used: f64,
    pub rank_flag: bool,
}

impl Projector {
    pub fn new(phi: &DMatrix<f64>) -> Result<Self> {
        let (n, k) = phi.shape();
        if k == 0 {
            return Err(Error::Basis("instrument design has no columns".into()));
        }
        if n <= k {
            return Err(Error::TooFewObservations { n, k });
        }
        let mut gram = phi.transpose() * phi;
        linalg::symmetrize(&mut gram);
        let (lo, hi) = linalg::sym_eigen_range(&gram);
        let rcond = if hi > 0.0 { lo.max(0.0) / hi } else { 0.0 };
        let mut ridge_used = 0.0;
        if !(rcond >= RCOND_MIN) {
            ridge_used = RIDGE_EPS;
            let shift = RIDGE_EPS * gram.trace() / k as f64;
            for i in 0..k {
                gram[(i, i)] += shift;
            }
        }
        let gram_inverse = match gram.clone().cholesky() {
            Some(ch) => ch.inverse(),
            None => linalg::pinv(&gram, SV_RTOL).0,
        };
        Ok(Projector {
            phi: phi.clone(),
            gram_inverse,
            ridge_used,
            rcond,
            min_eigen: lo / n as f64,
            rank_flag: rcond < RCOND_MIN,
        })
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn k(&self) -> usize {
        self.phi.ncols()
    }

    pub fn coefficients(&self, targets: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if targets.nrows() != self.n() {
            return Err(Error::Dimension(format!(
                "targets have {} rows, design has {}",
                targets.nrows(),
                self.n()
            )));
        }
        Ok(&self.gram_inverse * (self.phi.transpose() * targets))
    }

    /// Fitted values `P targets`.
    pub fn project(&self, targets: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(&self.phi * self.coefficients(targets)?)
    }

    pub fn fit(&self, targets: &DMatrix<f64>) -> Result<ProjectionModel> {
        Ok(ProjectionModel {
            gram_inverse: self.gram_inverse.clone(),
            coefficients: self.coefficients(targets)?,
            ridge_used: self.ridge_used,
            rank_flag: self.rank_flag,
        })
    }
}

pub fn fit(phi: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<ProjectionModel> {
    Projector::new(phi)?.fit(targets)
}

pub fn predict(model: &ProjectionModel, phi_rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if phi_rows.ncols() != model.coefficients.nrows() {
        return Err(Error::Dimension(format!(
            "rows have {} columns, model expects {}",
            phi_rows.ncols(),
            model.coefficients.nrows()
        )));
    }
    Ok(phi_rows * &model.coefficients)
}

/// `n x m` matrix of projected bridge-basis columns, `P Psi`.
pub fn cross_operator(phi: &DMatrix<f64>, psi: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Projector::new(phi)?.project(psi)
}
