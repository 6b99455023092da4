//! Bridge-function solution sets as finite linear systems.
//!
//! For a fixed arm `a` the outcome bridge equation becomes, for every
//! supported `(z, x)`,
//! `sum_w h(w, a, x) P(w | z, a, x) = E[Y | z, a, x]`,
//! and the treatment bridge equation, for every supported `(w, x)`,
//! `sum_z q(z, a, x) P(z | w, a, x) = 1 / P(A = a | w, x)`.
//!
//! Unknowns are indexed `x * levels + level`. Rows whose conditioning
//! event has probability zero are dropped. Inner products on both sides
//! are weighted by the arm-restricted marginals, so the adjoint of the
//! system operator is the opposite conditional expectation.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::joint::{DiscreteJoint, NULL_PROB};
use crate::error::{Error, Result};
use crate::linalg::{self, SV_RTOL};

const SOLVE_TOL: f64 = 1e-9;
const IDENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeKind {
    Outcome,
    Treatment,
}

/// Linear system `K v = rhs` with weights for the row and unknown spaces.
#[derive(Debug, Clone)]
pub struct BridgeSystem {
    pub kind: BridgeKind,
    pub arm: u8,
    /// Supported rows only.
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Probability of each supported row's conditioning event.
    pub row_weights: DVector<f64>,
    /// Probability of each unknown's cell (arm-restricted), zero if unsupported.
    pub col_weights: DVector<f64>,
    /// Grid label `(level, x)` of each supported row.
    pub row_cells: Vec<(usize, usize)>,
}

/// `particular + span(null_basis)`.
#[derive(Debug, Clone, Serialize)]
pub struct AffineSolutionSet {
    pub kind: BridgeKind,
    pub arm: u8,
    pub particular: DVector<f64>,
    /// Orthonormal columns spanning the kernel of the system matrix.
    pub null_basis: DMatrix<f64>,
    pub dim: usize,
    /// Max-norm residual of the particular solution.
    pub residual: f64,
    #[serde(skip)]
    pub system: BridgeSystem,
}

/// Identification and root-n range membership for one functional.
#[derive(Debug, Clone, Serialize)]
pub struct IdentificationReport {
    pub functional_identified: bool,
    pub root_n_range_member: bool,
    pub null_dim: usize,
    /// Largest |<phi, v>| over null-basis columns `v`, weighted inner product.
    pub max_null_inner_product: f64,
    /// Least-squares residual norm of `adjoint f = phi`.
    pub range_residual: f64,
    /// Least-squares preimage `f` under the adjoint (indexed like the system rows' space).
    pub preimage: Vec<f64>,
}

pub fn build_system(joint: &DiscreteJoint, arm: u8, kind: BridgeKind) -> BridgeSystem {
    let pzw = joint.p_zw_given_arm(arm);
    let (cw, cz, cx) = (joint.card_w, joint.card_z, joint.card_x);
    match kind {
        BridgeKind::Outcome => {
            let ymom = joint.y_moment_zx(arm);
            let mut rows = Vec::new();
            let mut rhs = Vec::new();
            let mut row_w = Vec::new();
            let mut cells = Vec::new();
            let mut col_w = DVector::zeros(cw * cx);
            for x in 0..cx {
                for z in 0..cz {
                    let pz: f64 = pzw[x][z].iter().sum();
                    for w in 0..cw {
                        col_w[x * cw + w] += pzw[x][z][w];
                    }
                    if pz <= NULL_PROB {
                        continue;
                    }
                    let mut row = vec![0.0; cw * cx];
                    for w in 0..cw {
                        row[x * cw + w] = pzw[x][z][w] / pz;
                    }
                    rows.push(row);
                    rhs.push(ymom[x][z] / pz);
                    row_w.push(pz);
                    cells.push((z, x));
                }
            }
            assemble(kind, arm, rows, rhs, row_w, col_w, cells, cw * cx)
        }
        BridgeKind::Treatment => {
            let pwx = joint.p_wx();
            let mut rows = Vec::new();
            let mut rhs = Vec::new();
            let mut row_w = Vec::new();
            let mut cells = Vec::new();
            let mut col_w = DVector::zeros(cz * cx);
            for x in 0..cx {
                for z in 0..cz {
                    col_w[x * cz + z] = pzw[x][z].iter().sum();
                }
                for w in 0..cw {
                    let pw: f64 = (0..cz).map(|z| pzw[x][z][w]).sum();
                    if pw <= NULL_PROB {
                        continue;
                    }
                    let mut row = vec![0.0; cz * cx];
                    for z in 0..cz {
                        row[x * cz + z] = pzw[x][z][w] / pw;
                    }
                    rows.push(row);
                    // 1 / P(A = a | w, x)
                    rhs.push(pwx[x][w] / pw);
                    row_w.push(pw);
                    cells.push((w, x));
                }
            }
            assemble(kind, arm, rows, rhs, row_w, col_w, cells, cz * cx)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    kind: BridgeKind,
    arm: u8,
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    row_w: Vec<f64>,
    col_w: DVector<f64>,
    cells: Vec<(usize, usize)>,
    n_unknowns: usize,
) -> BridgeSystem {
    let m = rows.len();
    let matrix = DMatrix::from_fn(m, n_unknowns, |i, j| rows[i][j]);
    BridgeSystem {
        kind,
        arm,
        matrix,
        rhs: DVector::from_vec(rhs),
        row_weights: DVector::from_vec(row_w),
        col_weights: col_w,
        row_cells: cells,
    }
}

impl BridgeSystem {
    /// Matrix of the adjoint under the weighted inner products, restricted to
    /// supported unknown cells: `adj[c, r] = row_w[r] K[r, c] / col_w[c]`.
    /// Returns the matrix and the indices of the supported unknowns.
    pub fn adjoint(&self) -> (DMatrix<f64>, Vec<usize>) {
        let support: Vec<usize> = (0..self.matrix.ncols())
            .filter(|&c| self.col_weights[c] > NULL_PROB)
            .collect();
        let adj = DMatrix::from_fn(support.len(), self.matrix.nrows(), |i, r| {
            let c = support[i];
            self.row_weights[r] * self.matrix[(r, c)] / self.col_weights[c]
        });
        (adj, support)
    }

    /// Weighted Gram `K' D K` of the induced seminorm `||v||_w^2 = sum_r D_r (K v)_r^2`.
    pub fn weighted_gram(&self) -> DMatrix<f64> {
        let dk = DMatrix::from_fn(self.matrix.nrows(), self.matrix.ncols(), |r, c| {
            self.row_weights[r] * self.matrix[(r, c)]
        });
        let mut g = self.matrix.transpose() * dk;
        linalg::symmetrize(&mut g);
        g
    }
}

pub fn bridge_solution_set(
    joint: &DiscreteJoint,
    arm: u8,
    kind: BridgeKind,
) -> Result<AffineSolutionSet> {
    check_arm(arm)?;
    solution_set_from_system(build_system(joint, arm, kind))
}

pub fn solution_set_from_system(system: BridgeSystem) -> Result<AffineSolutionSet> {
    let (particular, _) = linalg::min_norm_solve(&system.matrix, &system.rhs, SV_RTOL);
    let residual = linalg::max_abs(&(&system.matrix * &particular - &system.rhs));
    if !(residual <= SOLVE_TOL) {
        return Err(Error::NoBridge(format!(
            "{:?} bridge equation for arm {} is inconsistent (residual {residual:.3e})",
            system.kind, system.arm
        )));
    }
    let null_basis = linalg::null_space(&system.matrix, SV_RTOL);
    Ok(AffineSolutionSet {
        kind: system.kind,
        arm: system.arm,
        dim: null_basis.ncols(),
        particular,
        null_basis,
        residual,
        system,
    })
}

impl AffineSolutionSet {
    pub fn n_unknowns(&self) -> usize {
        self.particular.len()
    }

    /// `particular + null_basis * coords`.
    pub fn member(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.particular + &self.null_basis * coords
    }

    fn check_len(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.n_unknowns() {
            return Err(Error::Dimension(format!(
                "{what} has length {}, grid has {} cells",
                v.len(),
                self.n_unknowns()
            )));
        }
        Ok(())
    }

    /// Weighted inner product on the unknown grid.
    pub fn inner(&self, f: &DVector<f64>, g: &DVector<f64>) -> f64 {
        f.iter()
            .zip(g.iter())
            .zip(self.system.col_weights.iter())
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// True iff `phi` is orthogonal to every null direction.
    pub fn functional_identified(&self, phi: &[f64]) -> Result<bool> {
        self.check_len(phi, "phi")?;
        let phi = DVector::from_column_slice(phi);
        Ok(self.max_null_inner(&phi) <= IDENT_TOL * scale(&phi))
    }

    fn max_null_inner(&self, phi: &DVector<f64>) -> f64 {
        self.null_basis
            .column_iter()
            .map(|v| self.inner(phi, &v.into_owned()).abs())
            .fold(0.0, f64::max)
    }

    pub fn root_n_range_member(&self, phi: &[f64]) -> Result<IdentificationReport> {
        self.check_len(phi, "phi")?;
        let phi = DVector::from_column_slice(phi);
        let (adj, support) = self.system.adjoint();
        let target = DVector::from_iterator(support.len(), support.iter().map(|&c| phi[c]));
        let (pre, _) = linalg::min_norm_solve(&adj, &target, SV_RTOL);
        let range_residual = (&adj * &pre - &target).norm();
        let max_inner = self.max_null_inner(&phi);
        Ok(IdentificationReport {
            functional_identified: max_inner <= IDENT_TOL * scale(&phi),
            root_n_range_member: range_residual <= IDENT_TOL * scale(&phi),
            null_dim: self.dim,
            max_null_inner_product: max_inner,
            range_residual,
            preimage: pre.iter().copied().collect(),
        })
    }

    /// Element minimizing the weighted squared length `sum_c col_w[c] v_c^2`;
    /// remaining ties broken by minimum Euclidean norm of the null coordinates.
    pub fn min_length_element(&self) -> DVector<f64> {
        if self.dim == 0 {
            return self.particular.clone();
        }
        let w = DMatrix::from_diagonal(&self.system.col_weights);
        let nt = self.null_basis.transpose();
        let lhs = &nt * &w * &self.null_basis;
        let rhs = -(&nt * &w * &self.particular);
        let (t, _) = linalg::min_norm_solve(&lhs, &rhs, SV_RTOL);
        self.member(&t)
    }
}

fn scale(phi: &DVector<f64>) -> f64 {
    linalg::max_abs(phi).max(1.0)
}

fn check_arm(arm: u8) -> Result<()> {
    if arm > 1 {
        return Err(Error::param("arm", "must be 0 or 1"));
    }
    Ok(())
}

/// True counterfactual mean by enumeration over the latent `U` and `X`:
/// `sum_{u,x} E[Y | A = a, U = u, X = x] P(U = u, X = x)`.
pub fn true_counterfactual_mean(joint: &DiscreteJoint, arm: u8) -> Result<f64> {
    check_arm(arm)?;
    joint.check_positivity()?;
    let pux = joint.p_ux();
    let mut num = vec![vec![0.0; joint.card_x]; joint.card_u];
    let mut den = vec![vec![0.0; joint.card_x]; joint.card_u];
    for ([u, x, a, _, _, y], p) in joint.cells() {
        if a == arm as usize {
            num[u][x] += p * joint.y_values[y];
            den[u][x] += p;
        }
    }
    let mut mu = 0.0;
    for u in 0..joint.card_u {
        for x in 0..joint.card_x {
            if pux[u][x] > NULL_PROB {
                mu += num[u][x] / den[u][x] * pux[u][x];
            }
        }
    }
    Ok(mu)
}

pub fn functional_identified(
    joint: &DiscreteJoint,
    arm: u8,
    phi: &[f64],
    kind: BridgeKind,
) -> Result<bool> {
    bridge_solution_set(joint, arm, kind)?.functional_identified(phi)
}

pub fn root_n_range_member(
    joint: &DiscreteJoint,
    arm: u8,
    phi: &[f64],
    kind: BridgeKind,
) -> Result<IdentificationReport> {
    bridge_solution_set(joint, arm, kind)?.root_n_range_member(phi)
}

/// `phi(w, x) = 1 / P(A = a | w, x)` on the outcome-bridge grid (0 where unsupported).
/// Its weighted inner product with `h` is the plug-in mean `sum h(w, a, x) P(w, x)`.
pub fn inverse_propensity_weights(joint: &DiscreteJoint, arm: u8) -> Vec<f64> {
    let pwx = joint.p_wx();
    let pzw = joint.p_zw_given_arm(arm);
    let mut out = vec![0.0; joint.card_w * joint.card_x];
    for x in 0..joint.card_x {
        for w in 0..joint.card_w {
            let pw: f64 = (0..joint.card_z).map(|z| pzw[x][z][w]).sum();
            if pw > NULL_PROB {
                out[x * joint.card_w + w] = pwx[x][w] / pw;
            }
        }
    }
    out
}

/// `phi(z, x) = E[Y | z, a, x]` on the treatment-bridge grid (0 where unsupported).
pub fn outcome_regression_weights(joint: &DiscreteJoint, arm: u8) -> Vec<f64> {
    let pzw = joint.p_zw_given_arm(arm);
    let ymom = joint.y_moment_zx(arm);
    let mut out = vec![0.0; joint.card_z * joint.card_x];
    for x in 0..joint.card_x {
        for z in 0..joint.card_z {
            let pz: f64 = pzw[x][z].iter().sum();
            if pz > NULL_PROB {
                out[x * joint.card_z + z] = ymom[x][z] / pz;
            }
        }
    }
    out
}

/// Plug-in functional `sum_{w,x} h(w, a, x) P(w, x)` for an outcome-bridge grid vector.
pub fn outcome_plugin_mean(joint: &DiscreteJoint, h: &DVector<f64>) -> f64 {
    let pwx = joint.p_wx();
    (0..joint.card_x)
        .flat_map(|x| (0..joint.card_w).map(move |w| (x, w)))
        .map(|(x, w)| h[x * joint.card_w + w] * pwx[x][w])
        .sum()
}

/// `sum_{z,x,y} q(z, a, x) y P(y, z, A = a, x)` for a treatment-bridge grid vector.
pub fn treatment_weighted_mean(joint: &DiscreteJoint, arm: u8, q: &DVector<f64>) -> f64 {
    let ymom = joint.y_moment_zx(arm);
    (0..joint.card_x)
        .flat_map(|x| (0..joint.card_z).map(move |z| (x, z)))
        .map(|(x, z)| q[x * joint.card_z + z] * ymom[x][z])
        .sum()
}
