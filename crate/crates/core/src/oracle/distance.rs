//! Point-to-solution-set distances (the directed half of a Hausdorff distance).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bridge::AffineSolutionSet;
use crate::error::{Error, Result};
use crate::linalg::{self, SV_RTOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Sup,
    /// Seminorm `||E[v | Z, A = a, X]||` induced by the system operator.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Distance {
    pub value: f64,
    /// Weighting was degenerate and the Euclidean metric was used instead.
    pub euclidean_fallback: bool,
}

/// Points per axis of the sup-norm search grid, and its refinement passes.
const GRID_BUDGET: f64 = 1e5;
const REFINEMENTS: usize = 2;

pub fn directed_distance(
    point: &DVector<f64>,
    set: &AffineSolutionSet,
    metric: Metric,
) -> Result<Distance> {
    if point.len() != set.n_unknowns() {
        return Err(Error::Dimension(format!(
            "point has length {}, set lives in dimension {}",
            point.len(),
            set.n_unknowns()
        )));
    }
    let diff = point - &set.particular;
    match metric {
        Metric::Weighted => {
            let gram = set.system.weighted_gram();
            let degenerate =
                !gram.iter().all(|v| v.is_finite()) || gram.trace() <= f64::MIN_POSITIVE;
            let gram = if degenerate {
                DMatrix::identity(diff.len(), diff.len())
            } else {
                gram
            };
            Ok(Distance {
                value: projected_length(&diff, &set.null_basis, &gram),
                euclidean_fallback: degenerate,
            })
        }
        Metric::Sup => Ok(Distance {
            value: sup_distance(&diff, &set.null_basis),
            euclidean_fallback: false,
        }),
    }
}

/// `min_t sqrt((d - N t)' G (d - N t))` in closed form.
fn projected_length(d: &DVector<f64>, null: &DMatrix<f64>, gram: &DMatrix<f64>) -> f64 {
    let resid = if null.ncols() == 0 {
        d.clone()
    } else {
        let nt = null.transpose();
        let (t, _) = linalg::min_norm_solve(&(&nt * gram * null), &(&nt * gram * d), SV_RTOL);
        d - null * t
    };
    (resid.transpose() * gram * &resid)[(0, 0)].max(0.0).sqrt()
}

/// `min_t ||d - N t||_inf` by a dense grid over the null coordinates,
/// refined around the incumbent.
fn sup_distance(d: &DVector<f64>, null: &DMatrix<f64>) -> f64 {
    let k = null.ncols();
    let objective = |t: &[f64]| -> f64 {
        (0..d.len())
            .map(|i| (d[i] - (0..k).map(|j| null[(i, j)] * t[j]).sum::<f64>()).abs())
            .fold(0.0, f64::max)
    };
    if k == 0 {
        return objective(&[]);
    }
    // ||N t||_2 = ||t||_2 and the optimum has ||N t||_inf <= 2 ||d||_inf.
    let radius = 2.0 * linalg::max_abs(d) * (d.len() as f64).sqrt();
    if radius == 0.0 {
        return 0.0;
    }
    let mut per_axis = (GRID_BUDGET.powf(1.0 / k as f64).floor() as usize).max(5);
    if per_axis.is_multiple_of(2) {
        per_axis += 1;
    }
    let mut center = vec![0.0; k];
    let mut half = radius;
    let mut best = objective(&center);
    for _ in 0..=REFINEMENTS {
        let step = 2.0 * half / (per_axis - 1) as f64;
        let mut idx = vec![0usize; k];
        let mut incumbent = center.clone();
        loop {
            let t: Vec<f64> = (0..k)
                .map(|j| center[j] - half + step * idx[j] as f64)
                .collect();
            let v = objective(&t);
            if v < best {
                best = v;
                incumbent = t;
            }
            // odometer increment
            let mut axis = 0;
            while axis < k {
                idx[axis] += 1;
                if idx[axis] < per_axis {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
            if axis == k {
                break;
            }
        }
        center = incumbent;
        half = 2.0 * step;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::bridge::{bridge_solution_set, BridgeKind};
    use crate::oracle::presets;

    #[test]
    fn member_has_zero_distance() {
        let joint = presets::nonunique();
        let set = bridge_solution_set(&joint, 1, BridgeKind::Outcome).unwrap();
        let p = set.member(&DVector::from_vec(vec![0.7]));
        for metric in [Metric::Sup, Metric::Weighted] {
            assert!(directed_distance(&p, &set, metric).unwrap().value < 1e-6);
        }
    }

    #[test]
    fn null_direction_has_zero_weighted_length() {
        let joint = presets::nonunique();
        let set = bridge_solution_set(&joint, 0, BridgeKind::Outcome).unwrap();
        let p = &set.particular + set.null_basis.column(0) * 2.0;
        let d = directed_distance(&p, &set, Metric::Weighted).unwrap();
        assert!(d.value < 1e-10 && !d.euclidean_fallback);
    }

    #[test]
    fn singleton_set_reduces_to_norm() {
        let joint = presets::nonunique();
        let set = bridge_solution_set(&joint, 0, BridgeKind::Treatment).unwrap();
        assert_eq!(set.dim, 0);
        let shift = DVector::from_vec(vec![0.3, -0.5]);
        let p = &set.particular + &shift;
        let d = directed_distance(&p, &set, Metric::Sup).unwrap();
        assert!((d.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn sup_distance_matches_one_dimensional_closed_form() {
        // set = {(t, t)}, point (1, -1): min_t max(|1 - t|, |1 + t|) = 1 at t = 0
        let null = DMatrix::from_column_slice(2, 1, &[1.0 / 2f64.sqrt(), 1.0 / 2f64.sqrt()]);
        let v = sup_distance(&DVector::from_vec(vec![1.0, -1.0]), &null);
        assert!((v - 1.0).abs() < 1e-6);
        // point (2, 0): optimum t = 1 on both coordinates gives 1
        let v = sup_distance(&DVector::from_vec(vec![2.0, 0.0]), &null);
        assert!((v - 1.0).abs() < 1e-4, "{v}");
    }

    #[test]
    fn rejects_mismatched_point() {
        let joint = presets::nonunique();
        let set = bridge_solution_set(&joint, 0, BridgeKind::Outcome).unwrap();
        assert!(directed_distance(&DVector::zeros(2), &set, Metric::Sup).is_err());
    }
}
