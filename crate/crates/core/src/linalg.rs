//! Dense linear-algebra helpers built on `nalgebra`.
//!
//! Rank decisions use a relative singular-value cutoff: singular values
//! below `max_sv * rtol` are treated as exact zeros.

use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff used for minimum-norm solutions.
pub const SV_RTOL: f64 = 1e-10;

/// Moore-Penrose pseudoinverse. Returns the inverse and the numerical rank.
pub fn pinv(a: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (DMatrix::zeros(n, m), 0);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = max_sv * rtol;
    let mut out = DMatrix::zeros(n, m);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            rank += 1;
            // out += v_i * u_i^T / s
            let vi = v_t.row(i).transpose();
            let ui = u.column(i);
            out += (vi * ui.transpose()) / s;
        }
    }
    (out, rank)
}

/// Minimum-Euclidean-norm least-squares solution of `a x = b`.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>, rtol: f64) -> (DVector<f64>, usize) {
    let (p, rank) = pinv(a, rtol);
    (p * b, rank)
}

/// Orthonormal basis (columns) of the null space of `a`.
pub fn null_space(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    // Pad with zero rows so the SVD returns a full set of right singular vectors.
    let rows = m.max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m, n)).copy_from(a);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let max_sv = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = max_sv * rtol;
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cutoff)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Smallest and largest eigenvalues of a symmetric matrix.
pub fn sym_eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    if a.nrows() == 0 {
        return (0.0, 0.0);
    }
    let eig = a.clone().symmetric_eigen();
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Solves `a x = b` for symmetric positive (semi)definite `a`: Cholesky first,
/// minimum-norm pseudoinverse solution when the factorization fails.
pub fn spd_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    match a.clone().cholesky() {
        Some(ch) => ch.solve(b),
        None => min_norm_solve(a, b, SV_RTOL).0,
    }
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_rank_deficient_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (p, rank) = pinv(&a, SV_RTOL);
        assert_eq!(rank, 1);
        assert!((p[(0, 0)] - 1.0).abs() < 1e-14);
        assert_eq!(p[(1, 1)], 0.0);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        let n = null_space(&a, SV_RTOL);
        assert_eq!(n.ncols(), 1);
        assert!((&a * &n).norm() < 1e-12);
        assert!((n.column(0).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn min_norm_solution_of_underdetermined_system() {
        // x1 + x2 = 2 has min-norm solution (1, 1)
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let (x, _) = min_norm_solve(&a, &DVector::from_vec(vec![2.0]), SV_RTOL);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }
}
