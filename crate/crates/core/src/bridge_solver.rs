//! Sample criterion `C_n` as a quadratic form in sieve coefficients, its
//! sublevel set, and minimum-length selection within that set.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::basis::BasisSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, SV_RTOL};
use crate::projection::Projector;

const NEG_CLAMP: f64 = 1e-10;
const ROUNDING_SLACK: f64 = 1e-12;
const MAX_DOUBLINGS: usize = 60;
const MAX_BISECTIONS: usize = 400;
const MEMBERSHIP_TOL: f64 = 1e-12;
/// Relative ridge added to the selection matrix.
pub const SELECTION_RIDGE: f64 = 1e-10;

/// Everything the criteria need from one dataset and one pair of bases.
#[derive(Debug, Clone)]
pub struct SieveSystem {
    pub n: usize,
    /// Number of instrument columns `k_n`.
    pub k: usize,
    pub y: DVector<f64>,
    pub a: Vec<u8>,
    /// Bridge basis at the observed treatment.
    pub psi_obs: DMatrix<f64>,
    /// Bridge basis with treatment overridden to 0 and to 1.
    pub psi_arm: [DMatrix<f64>; 2],
    /// `P psi_obs`.
    pub psi_hat: DMatrix<f64>,
    /// `P y`.
    pub y_cond: DVector<f64>,
    pub projection: ProjectionDiagnostics,
    pub out_of_range_rows: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ProjectionDiagnostics {
    pub ridge_used: f64,
    pub rcond: f64,
    pub min_eigen: f64,
    pub rank_flag: bool,
}

impl SieveSystem {
    pub fn new(data: &Dataset, bridge: &BasisSet, instrument: &BasisSet) -> Result<Self> {
        let psi = bridge.evaluate(data, None);
        let phi = instrument.evaluate(data, None);
        let out_of_range_rows = psi.out_of_range_rows.max(phi.out_of_range_rows);
        let mut sys = Self::from_designs(
            DVector::from_column_slice(&data.y),
            data.a.clone(),
            psi.values,
            [
                bridge.evaluate(data, Some(0)).values,
                bridge.evaluate(data, Some(1)).values,
            ],
            &phi.values,
        )?;
        sys.out_of_range_rows = out_of_range_rows;
        Ok(sys)
    }

    pub fn from_designs(
        y: DVector<f64>,
        a: Vec<u8>,
        psi_obs: DMatrix<f64>,
        psi_arm: [DMatrix<f64>; 2],
        phi: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        let p = psi_obs.ncols();
        if a.len() != n
            || psi_obs.nrows() != n
            || phi.nrows() != n
            || psi_arm.iter().any(|m| m.shape() != (n, p))
        {
            return Err(Error::Dimension(
                "designs and outcome disagree on n or p".into(),
            ));
        }
        let proj = Projector::new(phi)?;
        let psi_hat = proj.project(&psi_obs)?;
        let y_cond = proj
            .project(&DMatrix::from_column_slice(n, 1, y.as_slice()))?
            .column(0)
            .into_owned();
        Ok(SieveSystem {
            n,
            k: phi.ncols(),
            y,
            a,
            psi_obs,
            psi_arm,
            psi_hat,
            y_cond,
            projection: ProjectionDiagnostics {
                ridge_used: proj.ridge_used,
                rcond: proj.rcond,
                min_eigen: proj.min_eigen,
                rank_flag: proj.rank_flag,
            },
            out_of_range_rows: 0,
        })
    }

    pub fn p(&self) -> usize {
        self.psi_obs.ncols()
    }

    /// 1 where `A_i` is in `arm` (every row for `None`), else 0.
    pub fn mask(&self, arm: Option<u8>) -> Result<DVector<f64>> {
        let m = DVector::from_iterator(
            self.n,
            self.a.iter().map(|&ai| {
                if arm.is_none_or(|t| t == ai) {
                    1.0
                } else {
                    0.0
                }
            }),
        );
        if let Some(t) = arm {
            if t > 1 {
                return Err(Error::param("arm", "must be 0 or 1"));
            }
            if m.sum() == 0.0 {
                return Err(Error::EmptyArm(t));
            }
        }
        Ok(m)
    }
}

pub(crate) fn mask_rows(m: &DMatrix<f64>, mask: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, &w) in mask.iter().enumerate() {
        if w == 0.0 {
            out.row_mut(i).fill(0.0);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CriterionKind {
    Outcome,
    Representer,
}

/// `Q(beta) = beta' G beta - 2 g' beta + c`.
#[derive(Debug, Clone, Serialize)]
pub struct QuadraticCriterion {
    pub gram: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
    pub n: usize,
    pub arm: Option<u8>,
    pub kind: CriterionKind,
}

impl QuadraticCriterion {
    pub fn new(gram: DMatrix<f64>, linear: DVector<f64>, constant: f64) -> Result<Self> {
        let p = linear.len();
        if gram.shape() != (p, p) {
            return Err(Error::Dimension(format!(
                "G is {}x{}, g has length {p}",
                gram.nrows(),
                gram.ncols()
            )));
        }
        let mut gram = gram;
        linalg::symmetrize(&mut gram);
        Ok(QuadraticCriterion {
            gram,
            linear,
            constant,
            n: 0,
            arm: None,
            kind: CriterionKind::Outcome,
        })
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        (beta.transpose() * &self.gram * beta)[(0, 0)] - 2.0 * self.linear.dot(beta) + self.constant
    }

    fn check(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "beta has length {}, criterion has dimension {}",
                beta.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// `C_n` restricted to rows with `A_i = arm` (all rows for `None`).
pub fn assemble_outcome_criterion(
    sys: &SieveSystem,
    arm: Option<u8>,
) -> Result<QuadraticCriterion> {
    let mask = sys.mask(arm)?;
    let n = sys.n as f64;
    let psi_hat = mask_rows(&sys.psi_hat, &mask);
    let y_cond = sys.y_cond.component_mul(&mask);
    let mut q = QuadraticCriterion::new(
        psi_hat.transpose() * &psi_hat / n,
        psi_hat.transpose() * &y_cond / n,
        y_cond.norm_squared() / n,
    )?;
    q.n = sys.n;
    q.arm = arm;
    Ok(q)
}

/// Minimum-norm minimizer `G^+ g` and the minimum value (tiny negatives clamped to 0).
pub fn minimize_criterion(q: &QuadraticCriterion) -> (DVector<f64>, f64) {
    let beta = linalg::min_norm_solve(&q.gram, &q.linear, SV_RTOL).0;
    let mut c_min = q.value(&beta);
    if c_min < 0.0 && c_min > -NEG_CLAMP {
        c_min = 0.0;
    }
    (beta, c_min)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub value: f64,
    /// `kappa = 0`: the sublevel set collapses to the argmin set.
    pub degenerate: bool,
}

/// `c_n = c_min + kappa * k_n * ln(n) / n`.
pub fn choose_threshold(c_min: f64, n: usize, k_n: usize, kappa: f64) -> Result<Threshold> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(Error::param(
            "kappa",
            format!("must be finite and >= 0, got {kappa}"),
        ));
    }
    if n == 0 {
        return Err(Error::param("n", "must be positive"));
    }
    if !(c_min >= -NEG_CLAMP) {
        return Err(Error::param("c_min", format!("must be >= 0, got {c_min}")));
    }
    let n_f = n as f64;
    Ok(Threshold {
        value: c_min.max(0.0) + kappa * k_n as f64 * n_f.ln() / n_f,
        degenerate: kappa == 0.0,
    })
}

/// Selection matrix `M_n` in coefficients, plus its stabilizing ridge.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionWeights {
    pub matrix: DMatrix<f64>,
    pub ridge: f64,
}

impl SelectionWeights {
    /// `Psi' Psi / n + lambda_M I` with `lambda_M = 1e-10 tr(Psi'Psi/n) / p`.
    pub fn from_design(psi: &DMatrix<f64>) -> Self {
        let n = psi.nrows().max(1) as f64;
        Self::from_matrix(psi.transpose() * psi / n)
    }

    pub fn from_matrix(mut m: DMatrix<f64>) -> Self {
        linalg::symmetrize(&mut m);
        let p = m.nrows().max(1) as f64;
        let tr = m.trace();
        let ridge = SELECTION_RIDGE * if tr > 0.0 { tr / p } else { 1.0 };
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        SelectionWeights { matrix: m, ridge }
    }

    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        (beta.transpose() * &self.matrix * beta)[(0, 0)]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BridgeEstimate {
    pub beta: DVector<f64>,
    pub c_min: f64,
    pub c_n: f64,
    /// `Q(beta)`.
    pub criterion_value: f64,
    /// `M_n(beta)`.
    pub m_value: f64,
    /// `None` when the threshold equals `c_min` and the argmin set is searched directly.
    pub lagrange_multiplier: Option<f64>,
    pub feasible: bool,
    pub bisection_steps: usize,
}

/// `min beta' M beta` subject to `Q(beta) <= c_n`.
pub fn select_min_norm(
    q: &QuadraticCriterion,
    c_n: f64,
    m: &SelectionWeights,
) -> Result<BridgeEstimate> {
    let p = q.dim();
    if m.matrix.shape() != (p, p) {
        return Err(Error::Dimension(format!(
            "M is {}x{}, criterion has dimension {p}",
            m.matrix.nrows(),
            m.matrix.ncols()
        )));
    }
    if !c_n.is_finite() {
        return Err(Error::param("c_n", "must be finite"));
    }
    let (beta_star, c_min) = minimize_criterion(q);
    let finish = |beta: DVector<f64>, multiplier: Option<f64>, steps: usize| {
        let criterion_value = q.value(&beta);
        BridgeEstimate {
            c_min,
            c_n,
            criterion_value,
            m_value: m.value(&beta),
            lagrange_multiplier: multiplier,
            feasible: criterion_value <= c_n + NEG_CLAMP * c_n.abs().max(1.0),
            bisection_steps: steps,
            beta,
        }
    };

    let zero = DVector::zeros(p);
    if q.value(&zero) <= c_n {
        return Ok(finish(zero, Some(0.0), 0));
    }
    // slack below the rounding level of C_n itself carries no information
    if c_n - c_min <= ROUNDING_SLACK * q.constant.abs().max(1.0) {
        return Ok(finish(argmin_set_selection(q, &beta_star, m), None, 0));
    }

    let beta_at = |lambda: f64| -> DVector<f64> {
        if lambda <= 1.0 {
            linalg::spd_solve(&(&m.matrix + &q.gram * lambda), &(&q.linear * lambda))
        } else {
            linalg::spd_solve(&(&m.matrix / lambda + &q.gram), &q.linear)
        }
    };
    let tol = |lambda: f64| NEG_CLAMP * c_n.max(1.0) / lambda.max(1.0);

    // natural scale of the multiplier
    let tr_g = q.gram.trace();
    let mut hi = if tr_g > 0.0 {
        (m.matrix.trace() / tr_g).max(f64::MIN_POSITIVE)
    } else {
        1.0
    };
    let mut lo = 0.0;
    let mut steps = 0;
    let mut beta_hi = beta_at(hi);
    let mut q_hi = q.value(&beta_hi);
    let mut doublings = 0;
    while q_hi > c_n {
        if (q_hi - c_n).abs() <= tol(hi) {
            return Ok(finish(beta_hi, Some(hi), steps));
        }
        if doublings == MAX_DOUBLINGS {
            return Err(Error::Bracket(MAX_DOUBLINGS));
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        beta_hi = beta_at(hi);
        q_hi = q.value(&beta_hi);
    }
    while steps < MAX_BISECTIONS {
        if (q_hi - c_n).abs() <= tol(hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        steps += 1;
        let beta_mid = beta_at(mid);
        let q_mid = q.value(&beta_mid);
        if q_mid > c_n {
            lo = mid;
        } else {
            hi = mid;
            beta_hi = beta_mid;
            q_hi = q_mid;
        }
    }
    Ok(finish(beta_hi, Some(hi), steps))
}

/// Minimizer of `M` over `{beta : G beta = g}` (the zero-slack sublevel set).
fn argmin_set_selection(
    q: &QuadraticCriterion,
    beta_star: &DVector<f64>,
    m: &SelectionWeights,
) -> DVector<f64> {
    let eig = q.gram.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let null: Vec<DVector<f64>> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &ev)| ev <= max_ev * SV_RTOL)
        .map(|(i, _)| eig.eigenvectors.column(i).into_owned())
        .collect();
    if null.is_empty() {
        return beta_star.clone();
    }
    let n_mat = DMatrix::from_columns(&null);
    let lhs = n_mat.transpose() * &m.matrix * &n_mat;
    let rhs = -(n_mat.transpose() * &m.matrix * beta_star);
    beta_star + n_mat * linalg::spd_solve(&lhs, &rhs)
}

/// `Q(beta) <= c_n` up to `1e-12`.
pub fn membership(beta: &DVector<f64>, q: &QuadraticCriterion, c_n: f64) -> Result<bool> {
    q.check(beta)?;
    Ok(q.value(beta) <= c_n + MEMBERSHIP_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn crit(g: &[f64], lin: &[f64], c: f64) -> QuadraticCriterion {
        let p = lin.len();
        QuadraticCriterion::new(
            DMatrix::from_row_slice(p, p, g),
            DVector::from_column_slice(lin),
            c,
        )
        .unwrap()
    }

    fn identity_weights(p: usize) -> SelectionWeights {
        SelectionWeights {
            matrix: DMatrix::identity(p, p),
            ridge: 0.0,
        }
    }

    #[test]
    fn minimize_identity() {
        let (b, c) = minimize_criterion(&crit(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], 0.0));
        assert_eq!(b, DVector::zeros(2));
        assert_eq!(c, 0.0);
    }

    #[test]
    fn minimize_leaves_null_coordinate_at_zero() {
        let (b, c) = minimize_criterion(&crit(&[1.0, 0.0, 0.0, 0.0], &[1.0, 0.0], 1.0));
        assert!((b[0] - 1.0).abs() < 1e-14 && b[1] == 0.0);
        assert!(c.abs() < 1e-14);
    }

    #[test]
    fn threshold_formula() {
        let t = choose_threshold(0.0, 1000, 10, 1.0).unwrap();
        assert!((t.value - 10.0 * 1000f64.ln() / 1000.0).abs() < 1e-15);
        assert!((t.value - 0.0691).abs() < 1e-4);
        assert!(!t.degenerate);
        let t0 = choose_threshold(0.3, 1000, 10, 0.0).unwrap();
        assert_eq!(t0.value, 0.3);
        assert!(t0.degenerate);
    }

    #[test]
    fn threshold_rejects_negative_kappa() {
        match choose_threshold(0.0, 100, 4, -1.0).unwrap_err() {
            Error::InvalidParameter { name, .. } => assert_eq!(name, "kappa"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn interval_constraint_one_dim() {
        // (beta - 1)^2 <= 0.25
        let q = crit(&[1.0], &[1.0], 1.0);
        let est = select_min_norm(&q, 0.25, &identity_weights(1)).unwrap();
        assert!((est.beta[0] - 0.5).abs() < 1e-9, "{}", est.beta[0]);
        assert!(est.feasible);
        let lam = est.lagrange_multiplier.unwrap();
        assert!(lam * (est.criterion_value - 0.25).abs() < 1e-8);
    }

    #[test]
    fn line_constraint_two_dim() {
        // (b1 + b2 - 2)^2 <= 0
        let q = crit(&[1.0, 1.0, 1.0, 1.0], &[2.0, 2.0], 4.0);
        let est = select_min_norm(&q, 0.0, &identity_weights(2)).unwrap();
        assert!((est.beta[0] - 1.0).abs() < 1e-9 && (est.beta[1] - 1.0).abs() < 1e-9);
        assert_eq!(est.lagrange_multiplier, None);
    }

    #[test]
    fn feasible_origin_returns_zero() {
        let q = crit(&[1.0], &[1.0], 1.0);
        let est = select_min_norm(&q, 2.0, &identity_weights(1)).unwrap();
        assert_eq!(est.beta[0], 0.0);
        assert_eq!(est.lagrange_multiplier, Some(0.0));
    }

    #[test]
    fn membership_is_closed() {
        let q = crit(&[1.0], &[1.0], 1.0);
        assert!(membership(&DVector::from_element(1, 1.5), &q, 0.25).unwrap());
        assert!(!membership(&DVector::from_element(1, 3.0), &q, 0.25).unwrap());
        assert!(membership(&DVector::zeros(2), &q, 0.25).is_err());
    }

    #[test]
    fn selection_ridge_scales_with_trace() {
        let w =
            SelectionWeights::from_matrix(DMatrix::from_diagonal(&DVector::from_column_slice(&[
                2.0, 4.0,
            ])));
        assert!((w.ridge - 3e-10).abs() < 1e-24);
    }
}
