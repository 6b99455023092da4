//! Representer of the counterfactual-mean functional and the debiasing
//! correction built from it.
//!
//! `R_n(h) = (1/n) sum I(A_i = a) E^[h | Z_i, A_i, X_i]^2 - (2/n) sum h(W_i, a, X_i)`
//! is minimized over the bridge sieve; the projection of the minimizer
//! plays the role of the treatment bridge.

use nalgebra::DVector;
use serde::Serialize;

use crate::bridge_solver::{
    mask_rows, minimize_criterion, CriterionKind, QuadraticCriterion, SieveSystem,
};
use crate::error::Result;

/// Relative residual `||G G^+ g - g|| / ||g||` above which `g` is treated as
/// outside the range of `G`.
pub const RANGE_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct RepresenterEstimate {
    pub beta_g: DVector<f64>,
    /// `R_n(g^)`.
    pub r_value: f64,
    /// The linear term is not in the range of `G`: `R_n` is unbounded below
    /// and the minimum-norm stationary point of its range component is used.
    pub degenerate_flag: bool,
    pub range_residual: f64,
}

pub fn assemble_representer_criterion(sys: &SieveSystem, arm: u8) -> Result<QuadraticCriterion> {
    let mask = sys.mask(Some(arm))?;
    let n = sys.n as f64;
    let psi_hat = mask_rows(&sys.psi_hat, &mask);
    let linear = sys.psi_arm[arm as usize].row_sum().transpose() / n;
    let mut q = QuadraticCriterion::new(psi_hat.transpose() * &psi_hat / n, linear, 0.0)?;
    q.n = sys.n;
    q.arm = Some(arm);
    q.kind = CriterionKind::Representer;
    Ok(q)
}

pub fn estimate_representer(q: &QuadraticCriterion) -> RepresenterEstimate {
    let (beta_g, _) = minimize_criterion(q);
    let g_norm = q.linear.norm();
    let range_residual = if g_norm > 0.0 {
        (&q.gram * &beta_g - &q.linear).norm() / g_norm
    } else {
        0.0
    };
    RepresenterEstimate {
        r_value: q.value(&beta_g),
        degenerate_flag: range_residual > RANGE_RTOL,
        range_residual,
        beta_g,
    }
}

/// `e^_i = E^[Y | Z_i, A_i, X_i] - E^[h | Z_i, A_i, X_i]` for every observation.
pub fn residuals(sys: &SieveSystem, beta_h: &DVector<f64>) -> DVector<f64> {
    &sys.y_cond - &sys.psi_hat * beta_h
}

/// `r^_n = (1/n) sum I(A_i = a) E^[g^ | Z_i, A_i, X_i] e^_i`.
pub fn debias_correction(
    sys: &SieveSystem,
    beta_g: &DVector<f64>,
    beta_h: &DVector<f64>,
    arm: u8,
) -> Result<f64> {
    let mask = sys.mask(Some(arm))?;
    let q_hat = &sys.psi_hat * beta_g;
    let e = residuals(sys, beta_h);
    Ok(q_hat.component_mul(&mask).dot(&e) / sys.n as f64)
}
