//! Sieve approximating families for the bridge space (functions of
//! `(W, A, X)`) and the instrument space (functions of `(Z, A, X)`).
//!
//! A basis is the tensor product of univariate families over its
//! variables, optionally duplicated per treatment arm. Continuous
//! variables are rescaled to `[0, 1]` before evaluation.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Variables with at most this many distinct integer values get indicator columns
/// under [`Family::Auto`].
pub const AUTO_DISCRETE_MAX_LEVELS: usize = 10;
pub const MAX_DEFAULT_COUNT: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Indicators for discrete variables, shifted Legendre polynomials otherwise.
    Auto,
    Polynomial,
    Bspline,
    /// One indicator column per observed level (saturated).
    Indicator,
}

impl std::str::FromStr for Family {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(Family::Auto),
            "polynomial" => Ok(Family::Polynomial),
            "bspline" => Ok(Family::Bspline),
            "indicator" => Ok(Family::Indicator),
            other => Err(format!("unknown basis family `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: Family,
    /// Per-variable polynomial degree (B-spline order for `bspline`); a single
    /// entry applies to every variable; empty means sized from `n`.
    pub degree: Vec<usize>,
    /// Interior knots per variable for `bspline`; `None` means sized from `n`.
    pub interior_knots: Option<usize>,
    /// Separate coefficients per treatment arm.
    pub per_arm: bool,
    /// Keep only the first `count` tensor terms (graded order) per arm.
    pub count: Option<usize>,
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec {
            family: Family::Auto,
            degree: vec![],
            interior_knots: None,
            per_arm: true,
            count: None,
        }
    }
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.degree.contains(&0) {
            return Err(Error::param("degree", "all degrees must be >= 1"));
        }
        if self.count == Some(0) {
            return Err(Error::param("count", "must be positive"));
        }
        Ok(())
    }
}

/// Default total sieve size for the bridge space: `3 * ceil(n^(1/5))`, capped.
pub fn default_count(n: usize) -> usize {
    (3 * (n as f64).powf(0.2).ceil() as usize).clamp(2, MAX_DEFAULT_COUNT)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Var {
    W,
    Z,
    X(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::W => write!(f, "w"),
            Var::Z => write!(f, "z"),
            Var::X(j) => write!(f, "x{}", j + 1),
        }
    }
}

fn column(data: &Dataset, var: Var) -> &[f64] {
    match var {
        Var::W => &data.w,
        Var::Z => &data.z,
        Var::X(j) => &data.x[j],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub min: f64,
    pub range: f64,
}

impl AffineMap {
    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / self.range
    }

    pub fn invert(&self, t: f64) -> f64 {
        self.min + t * self.range
    }
}

/// Per-variable maps sending the observed support onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaleMap {
    pub w: AffineMap,
    pub z: AffineMap,
    pub x: Vec<AffineMap>,
    /// Outcome range, diagnostics only; `None` for a constant outcome.
    pub y: Option<AffineMap>,
}

fn fit_map(name: &str, values: &[f64]) -> Result<AffineMap> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > 0.0) {
        return Err(Error::ZeroRange(name.to_string()));
    }
    Ok(AffineMap { min, range })
}

pub fn fit_rescale(data: &Dataset) -> Result<RescaleMap> {
    if data.len() < 2 {
        return Err(Error::Dataset(format!(
            "need at least 2 observations, got {}",
            data.len()
        )));
    }
    Ok(RescaleMap {
        w: fit_map("w", &data.w)?,
        z: fit_map("z", &data.z)?,
        x: data
            .x
            .iter()
            .zip(&data.x_names)
            .map(|(c, name)| fit_map(name, c))
            .collect::<Result<_>>()?,
        y: fit_map("y", &data.y).ok(),
    })
}

impl RescaleMap {
    pub fn map_for(&self, var: Var) -> AffineMap {
        match var {
            Var::W => self.w,
            Var::Z => self.z,
            Var::X(j) => self.x[j],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Univariate {
    /// Shifted Legendre polynomials of degree `0..=degree`, orthonormal on `[0, 1]`.
    Legendre {
        degree: usize,
    },
    /// Clamped B-splines on `[0, 1]` with equally spaced interior knots.
    Bspline {
        degree: usize,
        knots: Vec<f64>,
    },
    Indicator {
        levels: Vec<f64>,
    },
}

impl Univariate {
    pub fn size(&self) -> usize {
        match self {
            Univariate::Legendre { degree } => degree + 1,
            Univariate::Bspline { degree, knots } => knots.len() - degree - 1,
            Univariate::Indicator { levels } => levels.len(),
        }
    }

    pub fn bspline(degree: usize, interior: usize) -> Self {
        let mut knots = vec![0.0; degree + 1];
        knots.extend((1..=interior).map(|i| i as f64 / (interior + 1) as f64));
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Univariate::Bspline { degree, knots }
    }

    fn needs_rescale(&self) -> bool {
        !matches!(self, Univariate::Indicator { .. })
    }

    /// Writes the basis values at a raw value `v` (rescaled with `map` if needed).
    /// Returns `true` when the point was outside the training support.
    fn eval(&self, v: f64, map: AffineMap, out: &mut [f64]) -> bool {
        match self {
            Univariate::Legendre { degree } => {
                let (t, clamped) = clamp_unit(map.apply(v));
                legendre_into(*degree, t, out);
                clamped
            }
            Univariate::Bspline { degree, knots } => {
                let (t, clamped) = clamp_unit(map.apply(v));
                bspline_into(*degree, knots, t, out);
                clamped
            }
            Univariate::Indicator { levels } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                match levels.iter().position(|&l| l == v) {
                    Some(i) => {
                        out[i] = 1.0;
                        false
                    }
                    None => true,
                }
            }
        }
    }
}

fn clamp_unit(t: f64) -> (f64, bool) {
    // tolerate rounding at the support edges
    const EDGE: f64 = 1e-12;
    if !(-EDGE..=1.0 + EDGE).contains(&t) {
        (t.clamp(0.0, 1.0), true)
    } else {
        (t.clamp(0.0, 1.0), false)
    }
}

fn legendre_into(degree: usize, t: f64, out: &mut [f64]) {
    let s = 2.0 * t - 1.0;
    let (mut p_prev, mut p) = (1.0, s);
    out[0] = 1.0;
    if degree >= 1 {
        out[1] = 3f64.sqrt() * s;
    }
    for k in 1..degree {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0) * s * p - kf * p_prev) / (kf + 1.0);
        p_prev = p;
        p = next;
        out[k + 1] = (2.0 * (kf + 1.0) + 1.0).sqrt() * p;
    }
}

/// Cox-de Boor evaluation of all B-splines of `degree` on `knots` at `t`.
fn bspline_into(degree: usize, knots: &[f64], t: f64, out: &mut [f64]) {
    let n_basis = knots.len() - degree - 1;
    out.iter_mut().for_each(|o| *o = 0.0);
    // span index: knots[span] <= t < knots[span + 1], last span closed on the right
    let span = if t >= knots[n_basis] {
        n_basis - 1
    } else {
        let mut s = degree;
        while s < n_basis - 1 && t >= knots[s + 1] {
            s += 1;
        }
        s
    };
    let mut nz = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    nz[0] = 1.0;
    for j in 1..=degree {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        let mut saved = 0.0;
        for r in 0..j {
            let denom = right[r + 1] + left[j - r];
            let temp = if denom == 0.0 { 0.0 } else { nz[r] / denom };
            nz[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        nz[j] = saved;
    }
    for (r, v) in nz.into_iter().enumerate() {
        out[span - degree + r] = v;
    }
}

/// A tensor-product family, possibly split by treatment arm.
#[derive(Debug, Clone, Serialize)]
pub struct BasisSet {
    pub vars: Vec<(Var, Univariate)>,
    /// Multi-indices into the univariate families, one per tensor term.
    pub terms: Vec<Vec<usize>>,
    pub per_arm: bool,
    pub rescale: RescaleMap,
    pub labels: Vec<String>,
}

/// `n x p` basis evaluations.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub values: DMatrix<f64>,
    pub labels: Vec<String>,
    /// Rows with at least one value outside the training support (clamped or unseen level).
    pub out_of_range_rows: usize,
}

fn distinct_levels(values: &[f64]) -> Vec<f64> {
    let mut levels: Vec<f64> = values.to_vec();
    levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    levels.dedup();
    levels
}

fn looks_discrete(values: &[f64]) -> bool {
    let levels = distinct_levels(values);
    levels.len() <= AUTO_DISCRETE_MAX_LEVELS && levels.iter().all(|v| v.fract() == 0.0)
}

/// Largest `d >= 1` with `(d + 1)^vars <= budget`.
fn degree_for_budget(budget: usize, vars: usize) -> usize {
    let mut d: usize = 1;
    while (d + 2).pow(vars as u32) <= budget {
        d += 1;
    }
    d
}

/// Builds the tensor-product family over `roles`.
///
/// `auto_count` is the total size targeted when `spec` leaves degrees or
/// knots unset.
pub fn build_basis(
    spec: &BasisSpec,
    roles: &[Var],
    data: &Dataset,
    rescale: &RescaleMap,
    auto_count: usize,
) -> Result<BasisSet> {
    spec.validate()?;
    if roles.is_empty() {
        return Err(Error::Basis("a basis needs at least one variable".into()));
    }
    if !spec.degree.is_empty() && spec.degree.len() != 1 && spec.degree.len() != roles.len() {
        return Err(Error::Basis(format!(
            "{} degrees given for {} variables",
            spec.degree.len(),
            roles.len()
        )));
    }
    let indicator: Vec<bool> = roles
        .iter()
        .map(|&v| match spec.family {
            Family::Indicator => true,
            Family::Auto => looks_discrete(column(data, v)),
            _ => false,
        })
        .collect();
    let level_product: usize = roles
        .iter()
        .zip(&indicator)
        .filter(|(_, &ind)| ind)
        .map(|(&v, _)| distinct_levels(column(data, v)).len())
        .product();
    let n_cont = indicator.iter().filter(|&&i| !i).count();
    let per_arm_target = if spec.per_arm {
        auto_count.div_ceil(2)
    } else {
        auto_count
    };
    let budget = (per_arm_target / level_product.max(1)).max(1 << n_cont);
    let auto_size = if n_cont == 0 {
        1
    } else {
        degree_for_budget(budget, n_cont) + 1
    };

    let mut vars = Vec::with_capacity(roles.len());
    for (i, &var) in roles.iter().enumerate() {
        let degree = match spec.degree.len() {
            0 => None,
            1 => Some(spec.degree[0]),
            _ => Some(spec.degree[i]),
        };
        let uni = if indicator[i] {
            Univariate::Indicator {
                levels: distinct_levels(column(data, var)),
            }
        } else if spec.family == Family::Bspline {
            let degree = degree.unwrap_or(3);
            let interior = spec
                .interior_knots
                .unwrap_or_else(|| auto_size.saturating_sub(degree + 1));
            Univariate::bspline(degree, interior)
        } else {
            Univariate::Legendre {
                degree: degree.unwrap_or(auto_size - 1),
            }
        };
        vars.push((var, uni));
    }

    let sizes: Vec<usize> = vars.iter().map(|(_, u)| u.size()).collect();
    let mut terms = tensor_terms(&sizes);
    let capacity = terms.len();
    if let Some(count) = spec.count {
        if count > capacity {
            return Err(Error::Basis(format!(
                "requested {count} terms but the tensor grid has only {capacity}"
            )));
        }
        terms.truncate(count);
    }

    let term_label = |t: &[usize]| -> String {
        vars.iter()
            .zip(t)
            .map(|((v, u), &k)| match u {
                Univariate::Legendre { .. } => format!("{v}:P{k}"),
                Univariate::Bspline { .. } => format!("{v}:B{k}"),
                Univariate::Indicator { levels } => format!("{v}=={}", levels[k]),
            })
            .collect::<Vec<_>>()
            .join("*")
    };
    let mut labels = Vec::new();
    if spec.per_arm {
        for arm in 0..2 {
            labels.extend(terms.iter().map(|t| format!("a{arm}*{}", term_label(t))));
        }
    } else {
        labels.extend(terms.iter().map(|t| term_label(t)));
    }
    Ok(BasisSet {
        vars,
        terms,
        per_arm: spec.per_arm,
        rescale: rescale.clone(),
        labels,
    })
}

/// Multi-indices of the full tensor grid ordered by total index, then lexicographically.
fn tensor_terms(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut terms: Vec<Vec<usize>> = vec![vec![]];
    for &s in sizes {
        terms = terms
            .into_iter()
            .flat_map(|t| {
                (0..s).map(move |k| {
                    let mut t = t.clone();
                    t.push(k);
                    t
                })
            })
            .collect();
    }
    terms.sort_by_key(|t| (t.iter().sum::<usize>(), t.clone()));
    terms
}

impl BasisSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn terms_per_arm(&self) -> usize {
        self.terms.len()
    }

    /// Whether every variable uses the saturated indicator family.
    pub fn is_saturated(&self) -> bool {
        self.vars
            .iter()
            .all(|(_, u)| matches!(u, Univariate::Indicator { .. }))
    }

    /// Evaluates one row from raw variable values (ordered like `vars`) and an arm.
    /// Returns whether any value fell outside the training support.
    pub fn eval_row(&self, raw: &[f64], arm: u8, out: &mut [f64]) -> bool {
        let mut outside = false;
        let uni_vals: Vec<Vec<f64>> = self
            .vars
            .iter()
            .zip(raw)
            .map(|((var, uni), &v)| {
                let mut buf = vec![0.0; uni.size()];
                let map = if uni.needs_rescale() {
                    self.rescale.map_for(*var)
                } else {
                    AffineMap {
                        min: 0.0,
                        range: 1.0,
                    }
                };
                outside |= uni.eval(v, map, &mut buf);
                buf
            })
            .collect();
        out.iter_mut().for_each(|o| *o = 0.0);
        let offset = if self.per_arm {
            arm as usize * self.terms.len()
        } else {
            0
        };
        for (j, term) in self.terms.iter().enumerate() {
            out[offset + j] = term
                .iter()
                .zip(&uni_vals)
                .map(|(&k, vals)| vals[k])
                .product();
        }
        outside
    }

    /// Design matrix over `data`; `override_arm` replaces every observation's treatment.
    pub fn evaluate(&self, data: &Dataset, override_arm: Option<u8>) -> DesignMatrix {
        let n = data.len();
        let p = self.len();
        let cols: Vec<&[f64]> = self.vars.iter().map(|(v, _)| column(data, *v)).collect();
        let mut values = DMatrix::zeros(n, p);
        let mut out_of_range_rows = 0;
        let mut raw = vec![0.0; cols.len()];
        let mut row = vec![0.0; p];
        for i in 0..n {
            for (r, c) in raw.iter_mut().zip(&cols) {
                *r = c[i];
            }
            let arm = override_arm.unwrap_or(data.a[i]);
            if self.eval_row(&raw, arm, &mut row) {
                out_of_range_rows += 1;
            }
            for (j, v) in row.iter().enumerate() {
                values[(i, j)] = *v;
            }
        }
        DesignMatrix {
            values,
            labels: self.labels.clone(),
            out_of_range_rows,
        }
    }
}
