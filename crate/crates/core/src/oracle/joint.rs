//! Exact probability tensor over finite-valued `(U, X, A, Z, W, Y)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CANONICAL_ORDER: [&str; 6] = ["u", "x", "a", "z", "w", "y"];

const SUM_TOL: f64 = 1e-12;
/// Conditioning events with probability at or below this are treated as null.
pub(crate) const NULL_PROB: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    pub card_u: usize,
    pub card_x: usize,
    pub card_z: usize,
    pub card_w: usize,
    pub card_y: usize,
    /// Row-major in canonical order `(u, x, a, z, w, y)`.
    prob: Vec<f64>,
    /// Numeric value of each outcome level.
    pub y_values: Vec<f64>,
}

/// JSON document form of a joint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDocument {
    pub dims: BTreeMap<String, usize>,
    pub prob: Vec<f64>,
    pub order: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_values: Option<Vec<f64>>,
}

impl DiscreteJoint {
    /// Builds and validates a joint from a canonical-order probability vector.
    pub fn new(
        card_u: usize,
        card_x: usize,
        card_z: usize,
        card_w: usize,
        card_y: usize,
        prob: Vec<f64>,
        y_values: Option<Vec<f64>>,
    ) -> Result<Self> {
        let y_values = y_values.unwrap_or_else(|| (0..card_y).map(|v| v as f64).collect());
        let joint = DiscreteJoint {
            card_u,
            card_x,
            card_z,
            card_w,
            card_y,
            prob,
            y_values,
        };
        joint.validate()?;
        Ok(joint)
    }

    fn validate(&self) -> Result<()> {
        let dims = [
            self.card_u,
            self.card_x,
            2,
            self.card_z,
            self.card_w,
            self.card_y,
        ];
        if dims.contains(&0) {
            return Err(Error::InvalidJoint(
                "all cardinalities must be positive".into(),
            ));
        }
        let len: usize = dims.iter().product();
        if self.prob.len() != len {
            return Err(Error::InvalidJoint(format!(
                "expected {len} probabilities, got {}",
                self.prob.len()
            )));
        }
        if self.y_values.len() != self.card_y {
            return Err(Error::InvalidJoint(
                "y_values length must equal card_y".into(),
            ));
        }
        if let Some(i) = self
            .prob
            .iter()
            .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(Error::InvalidJoint(format!("entry {i} outside [0, 1]")));
        }
        let total: f64 = self.prob.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidJoint(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.prob
    }

    #[inline]
    pub fn index(&self, u: usize, x: usize, a: usize, z: usize, w: usize, y: usize) -> usize {
        ((((u * self.card_x + x) * 2 + a) * self.card_z + z) * self.card_w + w) * self.card_y + y
    }

    #[inline]
    pub fn p(&self, u: usize, x: usize, a: usize, z: usize, w: usize, y: usize) -> f64 {
        self.prob[self.index(u, x, a, z, w, y)]
    }

    /// Inverse of [`index`](Self::index).
    pub fn decode(&self, mut flat: usize) -> [usize; 6] {
        let y = flat % self.card_y;
        flat /= self.card_y;
        let w = flat % self.card_w;
        flat /= self.card_w;
        let z = flat % self.card_z;
        flat /= self.card_z;
        let a = flat % 2;
        flat /= 2;
        let x = flat % self.card_x;
        let u = flat / self.card_x;
        [u, x, a, z, w, y]
    }

    /// Iterates `(u, x, a, z, w, y, prob)` over every cell.
    pub fn cells(&self) -> impl Iterator<Item = ([usize; 6], f64)> + '_ {
        self.prob
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.decode(i), p))
    }

    /// P(U = u, X = x).
    pub fn p_ux(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.card_x]; self.card_u];
        for ([u, x, ..], p) in self.cells() {
            out[u][x] += p;
        }
        out
    }

    /// P(A = a | U = u, X = x) for every `(u, x)`; `None` when P(u, x) = 0.
    pub fn propensity_ux(&self, arm: u8) -> Vec<Vec<Option<f64>>> {
        let pux = self.p_ux();
        let mut num = vec![vec![0.0; self.card_x]; self.card_u];
        for ([u, x, a, ..], p) in self.cells() {
            if a == arm as usize {
                num[u][x] += p;
            }
        }
        (0..self.card_u)
            .map(|u| {
                (0..self.card_x)
                    .map(|x| (pux[u][x] > NULL_PROB).then(|| num[u][x] / pux[u][x]))
                    .collect()
            })
            .collect()
    }

    /// Rejects the first `(u, x)` cell whose propensity is not strictly inside (0, 1).
    pub fn check_positivity(&self) -> Result<()> {
        for arm in 0..2u8 {
            for (u, row) in self.propensity_ux(arm).iter().enumerate() {
                for (x, p) in row.iter().enumerate() {
                    if let Some(p) = *p {
                        if p <= 0.0 || p >= 1.0 {
                            return Err(Error::Positivity { u, x, arm, prob: p });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// P(Z = z, W = w, A = a, X = x) indexed `[x][z][w]`.
    pub fn p_zw_given_arm(&self, arm: u8) -> Vec<Vec<Vec<f64>>> {
        let mut out = vec![vec![vec![0.0; self.card_w]; self.card_z]; self.card_x];
        for ([_, x, a, z, w, _], p) in self.cells() {
            if a == arm as usize {
                out[x][z][w] += p;
            }
        }
        out
    }

    /// Sum of `y * P(z, a, x, y)` indexed `[x][z]`.
    pub fn y_moment_zx(&self, arm: u8) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.card_z]; self.card_x];
        for ([_, x, a, z, _, y], p) in self.cells() {
            if a == arm as usize {
                out[x][z] += p * self.y_values[y];
            }
        }
        out
    }

    /// P(W = w, X = x) indexed `[x][w]`.
    pub fn p_wx(&self) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; self.card_w]; self.card_x];
        for ([_, x, _, _, w, _], p) in self.cells() {
            out[x][w] += p;
        }
        out
    }

    pub fn to_document(&self) -> JointDocument {
        let dims = [
            ("u", self.card_u),
            ("x", self.card_x),
            ("a", 2),
            ("z", self.card_z),
            ("w", self.card_w),
            ("y", self.card_y),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        JointDocument {
            dims,
            prob: self.prob.clone(),
            order: CANONICAL_ORDER.iter().map(|s| s.to_string()).collect(),
            y_values: Some(self.y_values.clone()),
        }
    }

    /// Accepts any permutation of the six axes in `order`.
    pub fn from_document(doc: &JointDocument) -> Result<Self> {
        let mut seen = doc.order.clone();
        seen.sort();
        let mut expected: Vec<String> = CANONICAL_ORDER.iter().map(|s| s.to_string()).collect();
        expected.sort();
        if seen != expected {
            return Err(Error::InvalidJoint(format!(
                "order must be a permutation of {CANONICAL_ORDER:?}, got {:?}",
                doc.order
            )));
        }
        for key in doc.dims.keys() {
            if !CANONICAL_ORDER.contains(&key.as_str()) {
                return Err(Error::InvalidJoint(format!("unknown dimension `{key}`")));
            }
        }
        let dim = |k: &str| -> Result<usize> {
            doc.dims
                .get(k)
                .copied()
                .ok_or_else(|| Error::InvalidJoint(format!("missing dimension `{k}`")))
        };
        if dim("a")? != 2 {
            return Err(Error::InvalidJoint(
                "treatment must be binary (dims.a = 2)".into(),
            ));
        }
        let canon: Vec<usize> = CANONICAL_ORDER
            .iter()
            .map(|k| dim(k))
            .collect::<Result<_>>()?;
        let len: usize = canon.iter().product();
        if doc.prob.len() != len {
            return Err(Error::InvalidJoint(format!(
                "expected {len} probabilities, got {}",
                doc.prob.len()
            )));
        }
        // position of each canonical axis inside the document order
        let pos: Vec<usize> = CANONICAL_ORDER
            .iter()
            .map(|k| doc.order.iter().position(|o| o == k).unwrap())
            .collect();
        let doc_dims: Vec<usize> = doc.order.iter().map(|k| doc.dims[k]).collect();
        let mut prob = vec![0.0; len];
        let mut idx = [0usize; 6];
        for (flat, slot) in prob.iter_mut().enumerate() {
            let mut rem = flat;
            for axis in (0..6).rev() {
                idx[axis] = rem % canon[axis];
                rem /= canon[axis];
            }
            let mut doc_flat = 0;
            for (d, &size) in doc_dims.iter().enumerate() {
                let axis = pos.iter().position(|&p| p == d).unwrap();
                doc_flat = doc_flat * size + idx[axis];
            }
            *slot = doc.prob[doc_flat];
        }
        DiscreteJoint::new(
            canon[0],
            canon[1],
            canon[3],
            canon[4],
            canon[5],
            prob,
            doc.y_values.clone(),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: JointDocument = serde_json::from_str(text)?;
        Self::from_document(&doc)
    }
}
