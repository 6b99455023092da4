//! Named discrete data-generating processes and a factorized builder.

use super::joint::DiscreteJoint;
use crate::error::Result;

/// Conditional tables of a joint factorized as
/// `P(u) P(x | u) P(a | u, x) P(z | u, x, a) P(w | u, x) P(y | u, x, a, w)`.
///
/// This factorization makes `(Z, A)` independent of `(Y(a), W)` given `(U, X)`.
pub struct Factors {
    pub p_u: Vec<f64>,
    /// `[u][x]`
    pub p_x: Vec<Vec<f64>>,
    /// P(A = 1 | u, x), `[u][x]`
    pub p_a1: Vec<Vec<f64>>,
    /// `[u][x][a][z]`
    pub p_z: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[u][x][w]`
    pub p_w: Vec<Vec<Vec<f64>>>,
    /// `[u][x][a][w][y]`
    pub p_y: Vec<Vec<Vec<Vec<Vec<f64>>>>>,
    pub y_values: Option<Vec<f64>>,
}

impl Factors {
    pub fn into_joint(self) -> Result<DiscreteJoint> {
        let cu = self.p_u.len();
        let cx = self.p_x[0].len();
        let cz = self.p_z[0][0][0].len();
        let cw = self.p_w[0][0].len();
        let cy = self.p_y[0][0][0][0].len();
        let mut prob = Vec::with_capacity(cu * cx * 2 * cz * cw * cy);
        for u in 0..cu {
            for x in 0..cx {
                for a in 0..2 {
                    let pa = if a == 1 {
                        self.p_a1[u][x]
                    } else {
                        1.0 - self.p_a1[u][x]
                    };
                    for z in 0..cz {
                        for w in 0..cw {
                            for y in 0..cy {
                                prob.push(
                                    self.p_u[u]
                                        * self.p_x[u][x]
                                        * pa
                                        * self.p_z[u][x][a][z]
                                        * self.p_w[u][x][w]
                                        * self.p_y[u][x][a][w][y],
                                );
                            }
                        }
                    }
                }
            }
        }
        // absorb rounding so the tensor sums to one
        let total: f64 = prob.iter().sum();
        prob.iter_mut().for_each(|p| *p /= total);
        DiscreteJoint::new(cu, cx, cz, cw, cy, prob, self.y_values)
    }
}

fn binary_y(p1: f64) -> Vec<f64> {
    vec![1.0 - p1, p1]
}

fn nonunique_with_effect(effect: f64) -> DiscreteJoint {
    let p_z = |u: usize| {
        if u == 0 {
            vec![0.8, 0.2]
        } else {
            vec![0.2, 0.8]
        }
    };
    let p_w = |u: usize| {
        if u == 0 {
            vec![0.6, 0.3, 0.1]
        } else {
            vec![0.1, 0.3, 0.6]
        }
    };
    Factors {
        p_u: vec![0.5, 0.5],
        p_x: vec![vec![1.0]; 2],
        p_a1: vec![vec![0.3], vec![0.7]],
        p_z: (0..2).map(|u| vec![vec![p_z(u), p_z(u)]]).collect(),
        p_w: (0..2).map(|u| vec![p_w(u)]).collect(),
        p_y: (0..2)
            .map(|u| {
                vec![(0..2)
                    .map(|a| vec![binary_y(0.3 - effect + effect * a as f64 + 0.4 * u as f64); 3])
                    .collect()]
            })
            .collect(),
        y_values: None,
    }
    .into_joint()
    .expect("preset is a valid joint")
}

/// Binary latent `U`, `|Z| = 2`, `|W| = 3`, binary `Y`, no covariates.
///
/// The outcome-bridge system has a one-dimensional null space in each arm
/// and a treatment bridge exists. `P(Y = 1 | A = a, U = u) = 0.1 + 0.2 a + 0.4 u`,
/// so the counterfactual means are 0.3 (a = 0) and 0.5 (a = 1).
pub fn nonunique() -> DiscreteJoint {
    nonunique_with_effect(0.2)
}

/// Same structure as [`nonunique`] with no treatment effect: both means are 0.5.
pub fn nonunique_no_effect() -> DiscreteJoint {
    nonunique_with_effect(0.0)
}

pub fn by_name(name: &str) -> Option<DiscreteJoint> {
    match name {
        "nonunique" => Some(nonunique()),
        "nonunique_no_effect" => Some(nonunique_no_effect()),
        _ => None,
    }
}

pub const PRESET_NAMES: [&str; 2] = ["nonunique", "nonunique_no_effect"];

/// Random factorized joint with `|U| <= min(|Z|, |W|)`, so both bridges exist
/// generically. Cardinalities are `[u, x, z, w, y]`.
pub fn random_joint(cards: [usize; 5], seed: u64) -> Result<DiscreteJoint> {
    use rand::{Rng, SeedableRng};
    let [cu, cx, cz, cw, cy] = cards;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut simplex = |k: usize| -> Vec<f64> {
        let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|p| p / s).collect()
    };
    let p_u = simplex(cu);
    let p_x = (0..cu).map(|_| simplex(cx)).collect();
    let p_z = (0..cu)
        .map(|_| {
            (0..cx)
                .map(|_| (0..2).map(|_| simplex(cz)).collect())
                .collect()
        })
        .collect();
    let p_w = (0..cu)
        .map(|_| (0..cx).map(|_| simplex(cw)).collect())
        .collect();
    let p_y = (0..cu)
        .map(|_| {
            (0..cx)
                .map(|_| {
                    (0..2)
                        .map(|_| (0..cw).map(|_| simplex(cy)).collect())
                        .collect()
                })
                .collect()
        })
        .collect();
    let p_a1 = (0..cu)
        .map(|_| (0..cx).map(|_| rng.random_range(0.1..0.9)).collect())
        .collect();
    Factors {
        p_u,
        p_x,
        p_a1,
        p_z,
        p_w,
        p_y,
        y_values: None,
    }
    .into_joint()
}
