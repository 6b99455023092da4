use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use proxbridge_cli::commands;
use proxbridge_cli::config::{Command, RawConfig, RunConfig};

#[derive(Parser)]
#[command(
    name = "proxbridge",
    version,
    about = "Proximal causal inference with non-unique bridge functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate counterfactual means and the ATE from a CSV dataset.
    Estimate(Common),
    /// Draw one dataset from a data-generating process.
    Simulate(Common),
    /// Monte Carlo study over a sample-size ladder.
    Mc(Common),
    /// Exact bridge solution sets and identification checks for a discrete joint.
    Oracle(Common),
}

#[derive(Args)]
struct Common {
    /// INI configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set mc.replications=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, allow_negative_numbers = true)]
    level: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    kappa: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    jobs: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(command: Command, args: Common) -> Result<RunConfig> {
    let mut raw = match &args.config {
        Some(p) => RawConfig::from_file(p)?,
        None => RawConfig::default(),
    };
    for s in &args.set {
        raw.apply_override(s)?;
    }
    for (key, value) in [
        ("estimator.level", args.level),
        ("estimator.kappa", args.kappa),
        ("run.seed", args.seed),
        ("run.jobs", args.jobs),
        ("run.out", args.out.map(|p| p.display().to_string())),
    ] {
        if let Some(v) = value {
            raw.set(key, v);
        }
    }
    RunConfig::resolve(command, &raw)
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let (command, args) = match cli.command {
        Cmd::Estimate(a) => (Command::Estimate, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Mc(a) => (Command::Mc, a),
        Cmd::Oracle(a) => (Command::Oracle, a),
    };
    let cfg = resolve(command, args)?;
    commands::run(&cfg)
}

fn fail(message: String, causes: Vec<String>) -> ExitCode {
    let doc = serde_json::json!({"error": {"message": message, "causes": causes}});
    eprintln!("{doc}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(e.kind().to_string(), vec![e.to_string().trim().to_string()]),
    };
    match run(cli) {
        Ok(status) => {
            println!("{status}");
            ExitCode::SUCCESS
        }
        Err(e) => fail(
            e.to_string(),
            e.chain().skip(1).map(|c| c.to_string()).collect(),
        ),
    }
}
