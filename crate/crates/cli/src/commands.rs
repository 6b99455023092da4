//! Subcommand implementations. Each writes its artifacts under `run.out`
//! and returns a status document for stdout.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use proxbridge::oracle::{
    bridge_solution_set, inverse_propensity_weights, outcome_plugin_mean, true_counterfactual_mean,
    AffineSolutionSet, BridgeKind,
};
use proxbridge::simulation::{Aggregate, McConfig, Target};
use proxbridge::{run_monte_carlo, McResult};
use serde_json::{json, Value};

use crate::config::{Command, DgpChoice, RunConfig};
use crate::io::{fmt_f64, fmt_opt, load_dataset, write_csv, write_dataset};

pub fn run(cfg: &RunConfig) -> Result<Value> {
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("cannot create output directory {}", cfg.out.display()))?;
    match cfg.command {
        Command::Estimate => estimate(cfg),
        Command::Simulate => simulate(cfg),
        Command::Mc => monte_carlo(cfg),
        Command::Oracle => oracle(cfg),
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn status(command: &str, artifacts: &[PathBuf], extra: Value) -> Value {
    let mut v = json!({
        "status": "ok",
        "command": command,
        "artifacts": artifacts.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    if let (Some(obj), Value::Object(more)) = (v.as_object_mut(), extra) {
        obj.extend(more);
    }
    v
}

fn estimate(cfg: &RunConfig) -> Result<Value> {
    let path = cfg.data_path.as_ref().expect("resolved for estimate");
    let loaded = load_dataset(path)?;
    let est = proxbridge::estimate(&loaded.data, &cfg.estimator)?;
    let doc = json!({
        "config": cfg.echo(),
        "warnings": loaded.warnings,
        "arms": est.arms,
        "ate": est.ate,
        "bridge_terms": est.bridge_basis.labels,
        "instrument_terms": est.instrument_basis.labels,
        "rescale": est.rescale,
    });
    let out = cfg.out.join("estimate.json");
    write_json(&out, &doc)?;
    let arm = |a: usize| json!({"mu_debiased": est.arms[a].mu_debiased, "ci": [est.arms[a].ci_low, est.arms[a].ci_high]});
    Ok(status(
        "estimate",
        &[out],
        json!({"n": loaded.data.len(), "mu_0": arm(0), "mu_1": arm(1), "ate": est.ate.estimate, "warnings": loaded.warnings}),
    ))
}

fn simulate(cfg: &RunConfig) -> Result<Value> {
    let n = cfg.dgp_n.expect("resolved for simulate");
    let dgp = cfg.dgp.build()?;
    let data = dgp.sample(n, cfg.seed)?;
    let mut comments = cfg.echo();
    for arm in 0..2u8 {
        comments.insert(format!("truth.mu_{arm}"), fmt_f64(dgp.true_mean(arm)?));
    }
    if let DgpChoice::LinearGaussian(spec) = &cfg.dgp {
        let b = spec.bridge();
        comments.insert("truth.bridge_intercept_0".into(), fmt_f64(b.intercept[0]));
        comments.insert("truth.bridge_intercept_1".into(), fmt_f64(b.intercept[1]));
        comments.insert("truth.bridge_slope_w".into(), fmt_f64(b.slope_w));
        comments.insert("truth.bridge_slope_x".into(), fmt_f64(b.slope_x));
    }
    let out = cfg.out.join("dataset.csv");
    write_dataset(&out, &comments, &data)?;
    Ok(status(
        "simulate",
        &[out],
        json!({"n": n, "seed": cfg.seed}),
    ))
}

const REPLICATE_HEADER: [&str; 17] = [
    "n",
    "r",
    "arm",
    "seed",
    "mu_true",
    "mu_plugin",
    "mu_db",
    "mu_naive",
    "r_hat",
    "sigma2",
    "ci_low",
    "ci_high",
    "covered",
    "set_dist",
    "h_sup_err",
    "c_n",
    "flags",
];

fn monte_carlo(cfg: &RunConfig) -> Result<Value> {
    let mc = McConfig {
        dgp: cfg.dgp.build()?,
        n_ladder: cfg.n_ladder.clone(),
        replications: cfg.replications,
        seed: cfg.seed,
        estimator: cfg.estimator.clone(),
        jobs: cfg.jobs,
    };
    let res = run_monte_carlo(&mc)?;
    let echo = cfg.echo();
    let mut artifacts = vec![];
    let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<()> {
        let path = cfg.out.join(name);
        write_csv(&path, &echo, header, rows)?;
        artifacts.push(path);
        Ok(())
    };
    emit("mc_replicates.csv", &REPLICATE_HEADER, replicate_rows(&res))?;
    emit(
        "bias_vs_n.csv",
        &[
            "n",
            "arm",
            "replicates",
            "failures",
            "mu_true",
            "bias_plugin",
            "bias_db",
            "bias_naive",
            "sd_plugin",
            "sd_db",
            "rmse_plugin",
            "rmse_db",
            "root_n_bias_plugin",
            "root_n_bias_db",
        ],
        res.aggregates
            .iter()
            .map(|g| {
                let rn = (g.n as f64).sqrt();
                let mut row = key_cols(g);
                row.extend([g.replicates.to_string(), g.failures.to_string()]);
                row.extend(
                    [
                        g.mu_true,
                        g.bias_plugin,
                        g.bias_db,
                        g.bias_naive,
                        g.sd_plugin,
                        g.sd_db,
                        g.rmse_plugin,
                        g.rmse_db,
                        rn * g.bias_plugin.abs(),
                        rn * g.bias_db.abs(),
                    ]
                    .map(fmt_f64),
                );
                row
            })
            .collect(),
    )?;
    emit(
        "coverage_vs_n.csv",
        &[
            "n",
            "arm",
            "replicates",
            "level",
            "coverage",
            "mean_se",
            "sd_db",
        ],
        res.aggregates
            .iter()
            .map(|g| {
                let mut row = key_cols(g);
                row.push(g.replicates.to_string());
                row.extend([cfg.estimator.level, g.coverage, g.mean_se, g.sd_db].map(fmt_f64));
                row
            })
            .collect(),
    )?;
    emit(
        "set_distance_vs_n.csv",
        &[
            "n",
            "arm",
            "mean_set_dist",
            "median_set_dist",
            "mean_h_sup_err",
            "median_h_sup_err",
            "mean_c_n",
        ],
        res.aggregates
            .iter()
            .filter(|g| g.arm != Target::Ate)
            .map(|g| {
                let mut row = key_cols(g);
                row.extend(
                    [
                        g.mean_set_dist,
                        g.median_set_dist,
                        g.mean_h_sup_err,
                        g.median_h_sup_err,
                        g.mean_c_n,
                    ]
                    .map(fmt_opt),
                );
                row
            })
            .collect(),
    )?;
    let summary = json!({
        "config": echo,
        "seed": cfg.seed,
        "timestamp": chrono::Utc::now().to_rfc3339(),
        "aggregates": res.aggregates,
        "failures": res.failures,
    });
    let path = cfg.out.join("mc_summary.json");
    write_json(&path, &summary)?;
    artifacts.push(path);
    Ok(status(
        "mc",
        &artifacts,
        json!({"replicates": res.rows.len(), "failures": res.failures.len(), "seed": cfg.seed}),
    ))
}

fn key_cols(g: &Aggregate) -> Vec<String> {
    vec![g.n.to_string(), g.arm.label().to_string()]
}

fn replicate_rows(res: &McResult) -> Vec<Vec<String>> {
    res.rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.n.to_string(),
                r.r.to_string(),
                r.arm.label().to_string(),
                r.seed.to_string(),
            ];
            row.extend(
                [
                    r.mu_true,
                    r.mu_plugin,
                    r.mu_db,
                    r.mu_naive,
                    r.r_hat,
                    r.sigma2,
                    r.ci_low,
                    r.ci_high,
                ]
                .map(fmt_f64),
            );
            row.push(u8::from(r.covered).to_string());
            row.extend([r.set_dist, r.h_sup_err, r.c_n].map(fmt_opt));
            row.push(r.flags.clone());
            row
        })
        .collect()
}

fn set_json(set: &AffineSolutionSet) -> Value {
    let cols: Vec<Vec<f64>> = set
        .null_basis
        .column_iter()
        .map(|c| c.iter().copied().collect())
        .collect();
    json!({
        "dim": set.dim,
        "particular": set.particular.as_slice(),
        "null_basis": cols,
        "residual": set.residual,
        "min_length_element": set.min_length_element().as_slice(),
    })
}

fn oracle(cfg: &RunConfig) -> Result<Value> {
    let joint = cfg.dgp.discrete_joint()?;
    joint.check_positivity()?;
    let mut arms = vec![];
    let mut dims = vec![];
    for arm in 0..2u8 {
        let mu = true_counterfactual_mean(&joint, arm)?;
        let outcome = bridge_solution_set(&joint, arm, BridgeKind::Outcome);
        let treatment = bridge_solution_set(&joint, arm, BridgeKind::Treatment);
        let mut entry = json!({"arm": arm, "mu_true": mu});
        match &outcome {
            Ok(set) => {
                let ipw = inverse_propensity_weights(&joint, arm);
                let report = set.root_n_range_member(&ipw)?;
                let h_min = set.min_length_element();
                entry["outcome_bridge"] = set_json(set);
                entry["identification"] = serde_json::to_value(&report)?;
                entry["plugin_at_min_length"] = json!(outcome_plugin_mean(&joint, &h_min));
                dims.push(set.dim);
            }
            Err(e) => entry["outcome_bridge"] = json!({"error": e.to_string()}),
        }
        entry["treatment_bridge"] = match &treatment {
            Ok(set) => set_json(set),
            Err(e) => json!({"error": e.to_string()}),
        };
        arms.push(entry);
    }
    let doc = json!({
        "config": cfg.echo(),
        "cardinalities": {"u": joint.card_u, "x": joint.card_x, "z": joint.card_z, "w": joint.card_w, "y": joint.card_y},
        "arms": arms,
    });
    let out = cfg.out.join("oracle.json");
    write_json(&out, &doc)?;
    Ok(status("oracle", &[out], json!({"outcome_null_dims": dims})))
}
