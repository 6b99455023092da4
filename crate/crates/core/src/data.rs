use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed data `(Y, A, Z, W, X)`; `X` may have zero columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub a: Vec<u8>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    /// Covariates stored column-wise, each of length `n`.
    pub x: Vec<Vec<f64>>,
    pub x_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        y: Vec<f64>,
        a: Vec<u8>,
        z: Vec<f64>,
        w: Vec<f64>,
        x: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let x_names = (1..=x.len()).map(|j| format!("x{j}")).collect();
        Self::with_names(y, a, z, w, x, x_names)
    }

    pub fn with_names(
        y: Vec<f64>,
        a: Vec<u8>,
        z: Vec<f64>,
        w: Vec<f64>,
        x: Vec<Vec<f64>>,
        x_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if a.len() != n || z.len() != n || w.len() != n || x.iter().any(|c| c.len() != n) {
            return Err(Error::Dataset(
                "all columns must have the same length".into(),
            ));
        }
        if x_names.len() != x.len() {
            return Err(Error::Dataset(
                "one name per covariate column required".into(),
            ));
        }
        if let Some(i) = a.iter().position(|&v| v > 1) {
            return Err(Error::Dataset(format!(
                "treatment must be 0 or 1 (row {i})"
            )));
        }
        let finite = |c: &[f64]| c.iter().all(|v| v.is_finite());
        if !finite(&y) || !finite(&z) || !finite(&w) || !x.iter().all(|c| finite(c)) {
            return Err(Error::Dataset("non-finite value".into()));
        }
        Ok(Dataset {
            y,
            a,
            z,
            w,
            x,
            x_names,
        })
    }

    pub fn empty(n_covariates: usize) -> Self {
        Dataset {
            y: vec![],
            a: vec![],
            z: vec![],
            w: vec![],
            x: vec![vec![]; n_covariates],
            x_names: (1..=n_covariates).map(|j| format!("x{j}")).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.len()
    }

    pub fn arm_count(&self, arm: u8) -> usize {
        self.a.iter().filter(|&&v| v == arm).count()
    }

    pub fn covariate_row(&self, i: usize) -> Vec<f64> {
        self.x.iter().map(|c| c[i]).collect()
    }

    /// Rows selected by index, in the given order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let pick = |c: &[f64]| rows.iter().map(|&i| c[i]).collect::<Vec<_>>();
        Dataset {
            y: pick(&self.y),
            a: rows.iter().map(|&i| self.a[i]).collect(),
            z: pick(&self.z),
            w: pick(&self.w),
            x: self.x.iter().map(|c| pick(c)).collect(),
            x_names: self.x_names.clone(),
        }
    }

    /// Every row repeated `times` times (block-wise).
    pub fn replicate(&self, times: usize) -> Dataset {
        let rows: Vec<usize> = (0..times).flat_map(|_| 0..self.len()).collect();
        self.select(&rows)
    }

    /// FNV-1a hash over the raw bits of every cell; identifies a dataset in reports.
    pub fn fingerprint(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut eat = |bits: u64| {
            for b in bits.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        eat(self.len() as u64);
        for i in 0..self.len() {
            eat(self.y[i].to_bits());
            eat(self.a[i] as u64);
            eat(self.z[i].to_bits());
            eat(self.w[i].to_bits());
            for c in &self.x {
                eat(c[i].to_bits());
            }
        }
        h
    }
}
