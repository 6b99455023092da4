//! Data-generating processes with known truth and the Monte Carlo driver.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inference::{estimate, naive_outcome_regression, Estimate, EstimatorConfig};
use crate::oracle::{
    bridge_solution_set, directed_distance, true_counterfactual_mean, AffineSolutionSet,
    BridgeKind, DiscreteJoint, Metric,
};

/// Largest tolerated share of rejected draws when truncating Gaussian noise.
pub const MAX_TRUNCATION: f64 = 0.05;
/// Propensities at the corners of this many latent standard deviations must stay in (0.05, 0.95).
pub const POSITIVITY_SD: f64 = 6.0;

/// Draws with `U` dropped from the output.
pub fn sample_discrete(joint: &DiscreteJoint, n: usize, seed: u64) -> Dataset {
    let cov = usize::from(joint.card_x > 1);
    if n == 0 {
        return Dataset::empty(cov);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist =
        WeightedIndex::new(joint.probabilities()).expect("validated joint has positive mass");
    let (mut y, mut a, mut z, mut w, mut x) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for _ in 0..n {
        let [_, xi, ai, zi, wi, yi] = joint.decode(dist.sample(&mut rng));
        y.push(joint.y_values[yi]);
        a.push(ai as u8);
        z.push(zi as f64);
        w.push(wi as f64);
        x.push(xi as f64);
    }
    let x = if cov == 1 { vec![x] } else { vec![] };
    Dataset::new(y, a, z, w, x).expect("sampled columns are consistent")
}

/// Linear structural model with one latent `U` and one covariate `X`:
/// `Z = z_u U + z_x X + e_z`, `W = w_u U + w_x X + e_w`,
/// `A ~ Bernoulli(logistic(a0 + a_u U + a_x X))`,
/// `Y = y0 + y_a A + y_u U + y_x X + e_y`.
/// Every exogenous draw is truncated at `trunc_sd` standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearGaussianSpec {
    pub z_u: f64,
    pub z_x: f64,
    pub w_u: f64,
    pub w_x: f64,
    pub a0: f64,
    pub a_u: f64,
    pub a_x: f64,
    pub y0: f64,
    pub y_a: f64,
    pub y_u: f64,
    pub y_x: f64,
    pub sd_u: f64,
    pub sd_x: f64,
    pub sd_z: f64,
    pub sd_w: f64,
    pub sd_y: f64,
    pub trunc_sd: f64,
}

impl Default for LinearGaussianSpec {
    fn default() -> Self {
        LinearGaussianSpec {
            z_u: 1.0,
            z_x: 0.5,
            w_u: 1.0,
            w_x: 0.5,
            a0: 0.0,
            a_u: 0.3,
            a_x: 0.15,
            y0: 1.0,
            y_a: 1.0,
            y_u: 1.0,
            y_x: 0.5,
            sd_u: 1.0,
            sd_x: 1.0,
            sd_z: 1.0,
            sd_w: 1.0,
            sd_y: 1.0,
            trunc_sd: 4.0,
        }
    }
}

/// `h(w, a, x) = intercept[a] + slope_w w + slope_x x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearBridge {
    pub intercept: [f64; 2],
    pub slope_w: f64,
    pub slope_x: f64,
}

impl LinearBridge {
    pub fn eval(&self, w: f64, arm: u8, x: f64) -> f64 {
        self.intercept[arm as usize] + self.slope_w * w + self.slope_x * x
    }
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

impl LinearGaussianSpec {
    /// Same model with the latent effects on treatment and outcome removed.
    /// The proxies keep their loadings on `U`, so they stay informative.
    pub fn without_confounding(&self) -> Self {
        LinearGaussianSpec {
            a_u: 0.0,
            y_u: 0.0,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("z_u", self.z_u),
            ("z_x", self.z_x),
            ("w_u", self.w_u),
            ("w_x", self.w_x),
            ("a0", self.a0),
            ("a_u", self.a_u),
            ("a_x", self.a_x),
            ("y0", self.y0),
            ("y_a", self.y_a),
            ("y_u", self.y_u),
            ("y_x", self.y_x),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::param(name, "must be finite"));
        }
        let sds = [
            ("sd_u", self.sd_u),
            ("sd_x", self.sd_x),
            ("sd_z", self.sd_z),
            ("sd_w", self.sd_w),
            ("sd_y", self.sd_y),
        ];
        if let Some((name, _)) = sds.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::param(name, "must be finite and >= 0"));
        }
        if !(self.trunc_sd >= 1.0 && self.trunc_sd.is_finite()) {
            return Err(Error::param("trunc_sd", "must be finite and >= 1"));
        }
        if self.w_u == 0.0 && self.y_u != 0.0 {
            return Err(Error::Simulation(
                "y_u != 0 needs w_u != 0, otherwise no outcome bridge is linear in W".into(),
            ));
        }
        for su in [-1.0, 1.0] {
            for sx in [-1.0, 1.0] {
                let t = self.a0
                    + self.a_u * su * POSITIVITY_SD * self.sd_u
                    + self.a_x * sx * POSITIVITY_SD * self.sd_x;
                let p = logistic(t);
                if !(p > 0.05 && p < 0.95) {
                    return Err(Error::Simulation(format!(
                        "propensity {p:.4} at the latent corner (u = {}, x = {}) sd is outside (0.05, 0.95)",
                        su * POSITIVITY_SD,
                        sx * POSITIVITY_SD
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn true_mean(&self, arm: u8) -> f64 {
        // U and X are symmetric around zero
        self.y0 + self.y_a * arm as f64
    }

    pub fn bridge(&self) -> LinearBridge {
        let r = if self.w_u == 0.0 {
            0.0
        } else {
            self.y_u / self.w_u
        };
        LinearBridge {
            intercept: [self.y0, self.y0 + self.y_a],
            slope_w: r,
            slope_x: self.y_x - r * self.w_x,
        }
    }
}

struct Truncated {
    trunc: f64,
    draws: usize,
    rejected: usize,
}

impl Truncated {
    fn draw<R: Rng>(&mut self, rng: &mut R, sd: f64) -> f64 {
        if sd == 0.0 {
            return 0.0;
        }
        loop {
            let v: f64 = rng.sample(StandardNormal);
            self.draws += 1;
            if v.abs() <= self.trunc {
                return v * sd;
            }
            self.rejected += 1;
        }
    }
}

/// Draws with `U` dropped; errors if truncation rejected more than 5% of draws.
pub fn sample_linear_gaussian(spec: &LinearGaussianSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tr = Truncated {
        trunc: spec.trunc_sd,
        draws: 0,
        rejected: 0,
    };
    let mut cols: [Vec<f64>; 4] = Default::default();
    let mut a = Vec::with_capacity(n);
    for _ in 0..n {
        let u = tr.draw(&mut rng, spec.sd_u);
        let x = tr.draw(&mut rng, spec.sd_x);
        let z = spec.z_u * u + spec.z_x * x + tr.draw(&mut rng, spec.sd_z);
        let w = spec.w_u * u + spec.w_x * x + tr.draw(&mut rng, spec.sd_w);
        let ai = u8::from(rng.random::<f64>() < logistic(spec.a0 + spec.a_u * u + spec.a_x * x));
        let y = spec.y0
            + spec.y_a * ai as f64
            + spec.y_u * u
            + spec.y_x * x
            + tr.draw(&mut rng, spec.sd_y);
        for (c, v) in cols.iter_mut().zip([y, z, w, x]) {
            c.push(v);
        }
        a.push(ai);
    }
    if tr.draws > 0 {
        let frac = tr.rejected as f64 / tr.draws as f64;
        if frac > MAX_TRUNCATION {
            return Err(Error::Simulation(format!(
                "truncation discarded {:.1}% of draws",
                100.0 * frac
            )));
        }
    }
    let [y, z, w, x] = cols;
    Dataset::new(y, a, z, w, vec![x])
}

#[derive(Debug, Clone)]
pub enum DgpSpec {
    Discrete(DiscreteJoint),
    LinearGaussian(LinearGaussianSpec),
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DgpSpec::Discrete(j) => j.check_positivity(),
            DgpSpec::LinearGaussian(s) => s.validate(),
        }
    }

    pub fn true_mean(&self, arm: u8) -> Result<f64> {
        match self {
            DgpSpec::Discrete(j) => true_counterfactual_mean(j, arm),
            DgpSpec::LinearGaussian(s) => Ok(s.true_mean(arm)),
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset> {
        match self {
            DgpSpec::Discrete(j) => Ok(sample_discrete(j, n, seed)),
            DgpSpec::LinearGaussian(s) => sample_linear_gaussian(s, n, seed),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of replicate `r` at sample size `n`; independent of execution order.
pub fn replicate_seed(seed: u64, n: usize, r: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ n as u64) ^ r as u64)
}

#[derive(Debug, Clone)]
pub struct McConfig {
    pub dgp: DgpSpec,
    pub n_ladder: Vec<usize>,
    pub replications: usize,
    pub seed: u64,
    pub estimator: EstimatorConfig,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    pub jobs: usize,
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::param("replications", "must be at least 2"));
        }
        if self.n_ladder.is_empty() {
            return Err(Error::param("n_ladder", "must not be empty"));
        }
        if self.n_ladder.windows(2).any(|w| w[0] >= w[1]) || self.n_ladder[0] == 0 {
            return Err(Error::param(
                "n_ladder",
                "must be positive and strictly increasing",
            ));
        }
        self.estimator.validate()?;
        self.dgp.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[serde(rename = "0")]
    Arm0,
    #[serde(rename = "1")]
    Arm1,
    Ate,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Arm0, Target::Arm1, Target::Ate];

    pub fn label(self) -> &'static str {
        match self {
            Target::Arm0 => "0",
            Target::Arm1 => "1",
            Target::Ate => "ate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub n: usize,
    pub r: usize,
    pub arm: Target,
    pub seed: u64,
    pub mu_true: f64,
    pub mu_plugin: f64,
    pub mu_db: f64,
    pub mu_naive: f64,
    pub r_hat: f64,
    pub sigma2: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub covered: bool,
    /// Weighted distance from the estimated bridge to the oracle solution set.
    pub set_dist: Option<f64>,
    /// Max-abs distance to the oracle minimum-length bridge.
    pub h_sup_err: Option<f64>,
    pub c_n: Option<f64>,
    pub flags: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateFailure {
    pub n: usize,
    pub r: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub n: usize,
    pub arm: Target,
    pub replicates: usize,
    pub failures: usize,
    pub mu_true: f64,
    pub bias_plugin: f64,
    pub bias_db: f64,
    pub bias_naive: f64,
    pub sd_plugin: f64,
    pub sd_db: f64,
    pub rmse_plugin: f64,
    pub rmse_db: f64,
    pub coverage: f64,
    pub mean_se: f64,
    pub mean_set_dist: Option<f64>,
    pub median_set_dist: Option<f64>,
    pub mean_h_sup_err: Option<f64>,
    pub median_h_sup_err: Option<f64>,
    pub mean_c_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McResult {
    pub rows: Vec<ReplicateRow>,
    pub failures: Vec<ReplicateFailure>,
    pub aggregates: Vec<Aggregate>,
}

struct Oracle {
    truth: [f64; 2],
    /// Outcome-bridge solution sets per arm and their minimum-length members.
    sets: Option<[(AffineSolutionSet, DVector<f64>); 2]>,
    card_w: usize,
    card_x: usize,
}

impl Oracle {
    fn new(dgp: &DgpSpec) -> Result<Self> {
        let truth = [dgp.true_mean(0)?, dgp.true_mean(1)?];
        let (sets, card_w, card_x) = match dgp {
            DgpSpec::Discrete(j) => {
                let set = |arm| -> Option<(AffineSolutionSet, DVector<f64>)> {
                    let s = bridge_solution_set(j, arm, BridgeKind::Outcome).ok()?;
                    let m = s.min_length_element();
                    Some((s, m))
                };
                let sets = match (set(0), set(1)) {
                    (Some(s0), Some(s1)) => Some([s0, s1]),
                    _ => None,
                };
                (sets, j.card_w, j.card_x)
            }
            DgpSpec::LinearGaussian(_) => (None, 0, 0),
        };
        Ok(Oracle {
            truth,
            sets,
            card_w,
            card_x,
        })
    }

    fn distances(&self, basis: &BasisSet, beta: &DVector<f64>, arm: u8) -> Option<(f64, f64)> {
        let (set, min_len) = &self.sets.as_ref()?[arm as usize];
        let grid = bridge_on_grid(basis, beta, arm, self.card_w, self.card_x);
        let dist = directed_distance(&grid, set, Metric::Weighted).ok()?.value;
        Some((dist, (&grid - min_len).amax()))
    }
}

/// Evaluates a fitted bridge at every `(w, x)` level of a discrete grid,
/// indexed `x * card_w + w` with levels coded `0, 1, ...`.
pub fn bridge_on_grid(
    basis: &BasisSet,
    beta: &DVector<f64>,
    arm: u8,
    card_w: usize,
    card_x: usize,
) -> DVector<f64> {
    let mut out = DVector::zeros(card_w * card_x);
    let mut row = vec![0.0; basis.len()];
    for x in 0..card_x {
        for w in 0..card_w {
            let raw: Vec<f64> = if card_x > 1 {
                vec![w as f64, x as f64]
            } else {
                vec![w as f64]
            };
            basis.eval_row(&raw, arm, &mut row);
            out[x * card_w + w] = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        }
    }
    out
}

fn flags(est: &Estimate, arms: &[usize]) -> String {
    let mut out: Vec<&str> = Vec::new();
    for &a in arms {
        let d = &est.arms[a].diagnostics;
        let checks = [
            (d.representer_degenerate, "representer_degenerate"),
            (d.kappa_degenerate, "kappa_degenerate"),
            (d.projection.ridge_used > 0.0, "projection_ridge"),
            (!d.feasible, "infeasible"),
            (d.ci_degenerate, "ci_degenerate"),
            (d.out_of_range_rows > 0, "out_of_range"),
        ];
        for (on, name) in checks {
            if on && !out.contains(&name) {
                out.push(name);
            }
        }
    }
    out.join(";")
}

fn run_replicate(
    config: &McConfig,
    oracle: &Oracle,
    n: usize,
    r: usize,
) -> std::result::Result<Vec<ReplicateRow>, ReplicateFailure> {
    let seed = replicate_seed(config.seed, n, r);
    let fail = |e: Error| ReplicateFailure {
        n,
        r,
        seed,
        error: e.to_string(),
    };
    let data = config.dgp.sample(n, seed).map_err(fail)?;
    let est = estimate(&data, &config.estimator).map_err(fail)?;
    let naive = [
        naive_outcome_regression(&data, 0).map_err(fail)?,
        naive_outcome_regression(&data, 1).map_err(fail)?,
    ];
    let mut rows = Vec::with_capacity(3);
    for arm in 0..2u8 {
        let rep = &est.arms[arm as usize];
        let truth = oracle.truth[arm as usize];
        let dist = oracle.distances(&est.bridge_basis, &est.bridges[arm as usize].beta, arm);
        rows.push(ReplicateRow {
            n,
            r,
            arm: if arm == 0 { Target::Arm0 } else { Target::Arm1 },
            seed,
            mu_true: truth,
            mu_plugin: rep.mu_plugin,
            mu_db: rep.mu_debiased,
            mu_naive: naive[arm as usize],
            r_hat: rep.r_hat_n,
            sigma2: rep.sigma2,
            ci_low: rep.ci_low,
            ci_high: rep.ci_high,
            covered: rep.ci_low <= truth && truth <= rep.ci_high,
            set_dist: dist.map(|d| d.0),
            h_sup_err: dist.map(|d| d.1),
            c_n: Some(rep.diagnostics.c_n),
            flags: flags(&est, &[arm as usize]),
        });
    }
    let truth = oracle.truth[1] - oracle.truth[0];
    rows.push(ReplicateRow {
        n,
        r,
        arm: Target::Ate,
        seed,
        mu_true: truth,
        mu_plugin: est.arms[1].mu_plugin - est.arms[0].mu_plugin,
        mu_db: est.ate.estimate,
        mu_naive: naive[1] - naive[0],
        r_hat: est.arms[1].r_hat_n - est.arms[0].r_hat_n,
        sigma2: est.ate.sigma2,
        ci_low: est.ate.ci_low,
        ci_high: est.ate.ci_high,
        covered: est.ate.ci_low <= truth && truth <= est.ate.ci_high,
        set_dist: None,
        h_sup_err: None,
        c_n: None,
        flags: flags(&est, &[0, 1]),
    });
    Ok(rows)
}

/// Order-independent mean: values are sorted before summation.
fn stable_mean(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// `(bias, sd, rmse)` with the standard deviation over `R` (not `R - 1`),
/// so `rmse^2 = bias^2 + sd^2`.
fn error_summary(estimates: &[f64], truth: f64) -> (f64, f64, f64) {
    let mut errs: Vec<f64> = estimates.iter().map(|e| e - truth).collect();
    let bias = stable_mean(&mut errs);
    let mut sq: Vec<f64> = errs.iter().map(|e| (e - bias).powi(2)).collect();
    let var = stable_mean(&mut sq);
    (bias, var.sqrt(), (bias * bias + var).sqrt())
}

pub fn aggregate(
    rows: &[ReplicateRow],
    failures: &[ReplicateFailure],
    n_ladder: &[usize],
) -> Vec<Aggregate> {
    let mut out = Vec::new();
    for &n in n_ladder {
        let n_fail = failures.iter().filter(|f| f.n == n).count();
        for target in Target::ALL {
            let sel: Vec<&ReplicateRow> = rows
                .iter()
                .filter(|r| r.n == n && r.arm == target)
                .collect();
            if sel.is_empty() {
                continue;
            }
            let truth = sel[0].mu_true;
            let col = |f: &dyn Fn(&ReplicateRow) -> f64| -> Vec<f64> {
                sel.iter().map(|r| f(r)).collect()
            };
            let opt = |f: &dyn Fn(&ReplicateRow) -> Option<f64>| -> Option<Vec<f64>> {
                sel.iter().map(|r| f(r)).collect()
            };
            let (bias_plugin, sd_plugin, rmse_plugin) =
                error_summary(&col(&|r| r.mu_plugin), truth);
            let (bias_db, sd_db, rmse_db) = error_summary(&col(&|r| r.mu_db), truth);
            let (bias_naive, _, _) = error_summary(&col(&|r| r.mu_naive), truth);
            let coverage = sel.iter().filter(|r| r.covered).count() as f64 / sel.len() as f64;
            let mean_se = stable_mean(&mut col(&|r| (r.sigma2 / r.n as f64).sqrt()));
            let dist = opt(&|r| r.set_dist);
            let sup = opt(&|r| r.h_sup_err);
            out.push(Aggregate {
                n,
                arm: target,
                replicates: sel.len(),
                failures: n_fail,
                mu_true: truth,
                bias_plugin,
                bias_db,
                bias_naive,
                sd_plugin,
                sd_db,
                rmse_plugin,
                rmse_db,
                coverage,
                mean_se,
                mean_set_dist: dist.clone().map(|mut v| stable_mean(&mut v)),
                median_set_dist: dist.map(|mut v| median(&mut v)),
                mean_h_sup_err: sup.clone().map(|mut v| stable_mean(&mut v)),
                median_h_sup_err: sup.map(|mut v| median(&mut v)),
                mean_c_n: opt(&|r| r.c_n).map(|mut v| stable_mean(&mut v)),
            });
        }
    }
    out
}

pub fn run_monte_carlo(config: &McConfig) -> Result<McResult> {
    config.validate()?;
    let oracle = Oracle::new(&config.dgp)?;
    let tasks: Vec<(usize, usize)> = config
        .n_ladder
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::Simulation(format!("thread pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(n, r)| run_replicate(config, &oracle, n, r))
            .collect()
    });
    let mut rows = Vec::with_capacity(3 * tasks.len());
    let mut failures = Vec::new();
    for res in results {
        match res {
            Ok(r) => rows.extend(r),
            Err(f) => failures.push(f),
        }
    }
    let aggregates = aggregate(&rows, &failures, &config.n_ladder);
    Ok(McResult {
        rows,
        failures,
        aggregates,
    })
}
