//! Plug-in and debiased counterfactual means, influence values, Wald
//! intervals and the treatment-effect contrast.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::{build_basis, default_count, fit_rescale, BasisSet, BasisSpec, RescaleMap, Var};
use crate::bridge_solver::{
    assemble_outcome_criterion, choose_threshold, minimize_criterion, select_min_norm,
    BridgeEstimate, ProjectionDiagnostics, SelectionWeights, SieveSystem,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, SV_RTOL};
use crate::representer::{
    assemble_representer_criterion, debias_correction, estimate_representer, RepresenterEstimate,
};

/// Below this sample size intervals are flagged as unreliable.
pub const SMALL_SAMPLE: usize = 30;

pub fn plugin_mean(sys: &SieveSystem, beta_h: &DVector<f64>, arm: u8) -> f64 {
    (&sys.psi_arm[arm as usize] * beta_h).mean()
}

/// `h(W_i, a, X_i) - mu + I(A_i = a) E^[g | Z_i, A_i, X_i] (Y_i - h(W_i, A_i, X_i))`.
pub fn influence_values(
    sys: &SieveSystem,
    beta_h: &DVector<f64>,
    beta_g: &DVector<f64>,
    arm: u8,
    mu: f64,
) -> Result<DVector<f64>> {
    let mask = sys.mask(Some(arm))?;
    let h_arm = &sys.psi_arm[arm as usize] * beta_h;
    let resid = &sys.y - &sys.psi_obs * beta_h;
    let q_hat = &sys.psi_hat * beta_g;
    Ok(h_arm.add_scalar(-mu) + q_hat.component_mul(&mask).component_mul(&resid))
}

fn variance(values: &DVector<f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    let mean = values.mean();
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
    /// Zero standard error: the interval is a single point.
    pub degenerate: bool,
    pub small_sample: bool,
}

/// Wald interval `mu +- z sqrt(sigma2 / n)`.
pub fn confidence_interval(mu: f64, sigma2: f64, n: usize, level: f64) -> Result<Interval> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::param(
            "level",
            format!("must lie in (0, 1), got {level}"),
        ));
    }
    if n == 0 || !(sigma2 >= 0.0) {
        return Err(Error::param(
            "sigma2",
            "needs n > 0 and a non-negative variance",
        ));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let half = z * (sigma2 / n as f64).sqrt();
    Ok(Interval {
        low: mu - half,
        high: mu + half,
        degenerate: half == 0.0,
        small_sample: n < SMALL_SAMPLE,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub bridge_basis: BasisSpec,
    pub instrument_basis: BasisSpec,
    pub kappa: f64,
    pub level: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            bridge_basis: BasisSpec::default(),
            instrument_basis: BasisSpec::default(),
            kappa: 1.0,
            level: 0.95,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(Error::param(
                "kappa",
                format!("must be finite and >= 0, got {}", self.kappa),
            ));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::param(
                "level",
                format!("must lie in (0, 1), got {}", self.level),
            ));
        }
        self.bridge_basis.validate()?;
        self.instrument_basis.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub m_count: usize,
    pub k_count: usize,
    pub c_min: f64,
    pub c_n: f64,
    pub kappa_degenerate: bool,
    pub m_value: f64,
    pub lagrange_multiplier: Option<f64>,
    pub feasible: bool,
    pub projection: ProjectionDiagnostics,
    pub r_value: f64,
    pub representer_degenerate: bool,
    pub representer_range_residual: f64,
    pub ci_degenerate: bool,
    pub small_sample: bool,
    pub out_of_range_rows: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub arm: u8,
    pub n: usize,
    pub mu_plugin: f64,
    pub r_hat_n: f64,
    pub mu_debiased: f64,
    pub sigma2: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub diagnostics: Diagnostics,
    pub beta_h: Vec<f64>,
    pub beta_g: Vec<f64>,
    pub influence: Vec<f64>,
    pub dataset_fingerprint: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AteReport {
    pub n: usize,
    pub estimate: f64,
    pub sigma2: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub ci_degenerate: bool,
}

/// `mu_1 - mu_0` with variance from the differenced influence values.
pub fn ate(report_1: &EstimateReport, report_0: &EstimateReport) -> Result<AteReport> {
    if report_1.dataset_fingerprint != report_0.dataset_fingerprint || report_1.n != report_0.n {
        return Err(Error::Dataset(
            "treatment-effect contrast needs both arms from the same dataset".into(),
        ));
    }
    if report_1.level != report_0.level {
        return Err(Error::param(
            "level",
            "arms were estimated at different levels",
        ));
    }
    let diff = DVector::from_iterator(
        report_1.n,
        report_1
            .influence
            .iter()
            .zip(&report_0.influence)
            .map(|(a, b)| a - b),
    );
    let estimate = report_1.mu_debiased - report_0.mu_debiased;
    let sigma2 = variance(&diff);
    let ci = confidence_interval(estimate, sigma2, report_1.n, report_1.level)?;
    Ok(AteReport {
        n: report_1.n,
        estimate,
        sigma2,
        ci_low: ci.low,
        ci_high: ci.high,
        level: report_1.level,
        ci_degenerate: ci.degenerate,
    })
}

/// Arm-wise least squares of `Y` on `(1, X)`, averaged over the whole sample.
/// Ignores the proxies, so it is consistent only without latent confounding.
pub fn naive_outcome_regression(data: &Dataset, arm: u8) -> Result<f64> {
    let rows: Vec<usize> = (0..data.len()).filter(|&i| data.a[i] == arm).collect();
    if rows.is_empty() {
        return Err(Error::EmptyArm(arm));
    }
    let d = data.n_covariates();
    let design = |i: usize, j: usize| if j == 0 { 1.0 } else { data.x[j - 1][i] };
    let x = DMatrix::from_fn(rows.len(), d + 1, |r, j| design(rows[r], j));
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| data.y[i]));
    let (coef, _) = linalg::min_norm_solve(&x, &y, SV_RTOL);
    let all = DMatrix::from_fn(data.len(), d + 1, design);
    Ok((all * coef).mean())
}

/// Fitted bases and per-arm results on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct Estimate {
    pub arms: [EstimateReport; 2],
    pub ate: AteReport,
    #[serde(skip)]
    pub bridges: [BridgeEstimate; 2],
    #[serde(skip)]
    pub representers: [RepresenterEstimate; 2],
    #[serde(skip)]
    pub bridge_basis: BasisSet,
    #[serde(skip)]
    pub instrument_basis: BasisSet,
    pub rescale: RescaleMap,
}

pub fn bridge_roles(data: &Dataset) -> Vec<Var> {
    std::iter::once(Var::W)
        .chain((0..data.n_covariates()).map(Var::X))
        .collect()
}

pub fn instrument_roles(data: &Dataset) -> Vec<Var> {
    std::iter::once(Var::Z)
        .chain((0..data.n_covariates()).map(Var::X))
        .collect()
}

/// Builds both sieves; `k_n` defaults to twice the realized bridge size.
pub fn build_bases(
    data: &Dataset,
    config: &EstimatorConfig,
) -> Result<(BasisSet, BasisSet, RescaleMap)> {
    let rescale = fit_rescale(data)?;
    let bridge = build_basis(
        &config.bridge_basis,
        &bridge_roles(data),
        data,
        &rescale,
        default_count(data.len()),
    )?;
    let instrument = build_basis(
        &config.instrument_basis,
        &instrument_roles(data),
        data,
        &rescale,
        2 * bridge.len(),
    )?;
    if !bridge.is_saturated() && bridge.len() > instrument.len() {
        return Err(Error::Basis(format!(
            "bridge basis ({}) is larger than the instrument basis ({})",
            bridge.len(),
            instrument.len()
        )));
    }
    Ok((bridge, instrument, rescale))
}

pub fn estimate(data: &Dataset, config: &EstimatorConfig) -> Result<Estimate> {
    config.validate()?;
    for arm in 0..2 {
        if data.arm_count(arm) == 0 {
            return Err(Error::EmptyArm(arm));
        }
    }
    let (bridge_basis, instrument_basis, rescale) = build_bases(data, config)?;
    let sys = SieveSystem::new(data, &bridge_basis, &instrument_basis)?;
    let fingerprint = format!("{:016x}", data.fingerprint());
    let weights = SelectionWeights::from_design(&sys.psi_obs);
    let fit_arm = |arm: u8| -> Result<(EstimateReport, BridgeEstimate, RepresenterEstimate)> {
        let q = assemble_outcome_criterion(&sys, Some(arm))?;
        let (_, c_min) = minimize_criterion(&q);
        let threshold = choose_threshold(c_min, sys.n, sys.k, config.kappa)?;
        let bridge = select_min_norm(&q, threshold.value, &weights)?;
        let rep = estimate_representer(&assemble_representer_criterion(&sys, arm)?);
        let mu_plugin = plugin_mean(&sys, &bridge.beta, arm);
        let r_hat_n = debias_correction(&sys, &rep.beta_g, &bridge.beta, arm)?;
        let mu_debiased = mu_plugin + r_hat_n;
        let influence = influence_values(&sys, &bridge.beta, &rep.beta_g, arm, mu_debiased)?;
        let sigma2 = variance(&influence);
        let ci = confidence_interval(mu_debiased, sigma2, sys.n, config.level)?;
        let report = EstimateReport {
            arm,
            n: sys.n,
            mu_plugin,
            r_hat_n,
            mu_debiased,
            sigma2,
            ci_low: ci.low,
            ci_high: ci.high,
            level: config.level,
            diagnostics: Diagnostics {
                m_count: bridge_basis.len(),
                k_count: instrument_basis.len(),
                c_min: bridge.c_min,
                c_n: bridge.c_n,
                kappa_degenerate: threshold.degenerate,
                m_value: bridge.m_value,
                lagrange_multiplier: bridge.lagrange_multiplier,
                feasible: bridge.feasible,
                projection: sys.projection,
                r_value: rep.r_value,
                representer_degenerate: rep.degenerate_flag,
                representer_range_residual: rep.range_residual,
                ci_degenerate: ci.degenerate,
                small_sample: ci.small_sample,
                out_of_range_rows: sys.out_of_range_rows,
            },
            beta_h: bridge.beta.iter().copied().collect(),
            beta_g: rep.beta_g.iter().copied().collect(),
            influence: influence.iter().copied().collect(),
            dataset_fingerprint: fingerprint.clone(),
        };
        Ok((report, bridge, rep))
    };
    let (r0, b0, g0) = fit_arm(0)?;
    let (r1, b1, g1) = fit_arm(1)?;
    let ate = ate(&r1, &r0)?;
    Ok(Estimate {
        arms: [r0, r1],
        ate,
        bridges: [b0, b1],
        representers: [g0, g1],
        bridge_basis,
        instrument_basis,
        rescale,
    })
}
