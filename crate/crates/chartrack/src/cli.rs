//! Command-line interface. Exit codes: 0 success, 1 usage, 2 data or
//! format error, 3 numerical or training error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{CommandFactory, Parser, Subcommand};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::diagnostics;
use crate::error::{Error, Result};
use crate::experiment::{self, Artifacts};

#[derive(Debug, Parser)]
#[command(name = "chartrack", version, about = "Latent channel tracking workbench")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's master seed.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory for reports and cached models.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the training channel dataset.
    GenData,
    /// Train the autoencoders with and without the distance loss.
    TrainAe,
    /// Train the latent trackers for both autoencoders.
    TrainTracker,
    /// Least-squares NMSE over the evaluation trajectory.
    EvalLs,
    /// Latent distance curves of both training strategies.
    RunAblation,
    /// NMSE over time for every method.
    RunComparison,
    /// Comparison and parameter counts for each base-station array size.
    RunScaling,
    /// Finite-difference gradient checks (no configuration needed).
    GradCheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Usage(_)) {
                eprintln!("{}", Cli::command().render_usage());
            }
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Usage("--config <PATH> is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn series_csv(header: &str, v: &[f64]) -> String {
    let mut out = format!("t,{header}\n");
    for (t, x) in v.iter().enumerate() {
        writeln!(out, "{t},{x}").unwrap();
    }
    out
}

/// Runs one command and returns a human-readable summary.
pub fn execute(cli: &Cli) -> Result<String> {
    let started = Instant::now();
    let out: &Path = &cli.out;
    if let Command::GradCheck { tolerance } = cli.command {
        let seed = cli.seed.unwrap_or(0);
        let mut text = String::new();
        let mut worst: f64 = 0.0;
        for r in diagnostics::gradient_suite(seed)? {
            writeln!(text, "{:<10} params {:>5}  max rel err {:.3e}", r.name, r.params, r.error).unwrap();
            worst = worst.max(r.error);
        }
        if !(worst < tolerance) {
            return Err(Error::Numerical {
                stage: "grad-check",
                message: format!("worst error {worst:.3e} exceeds {tolerance:.1e}\n{text}"),
            });
        }
        return Ok(text);
    }
    let cfg = load_config(cli)?;
    let artifacts = Artifacts::new(out);
    let (name, results) = match cli.command {
        Command::GenData => {
            let wb = experiment::Workbench::new(cfg.clone())?;
            let path = artifacts.dataset_path();
            wb.dataset_file().save(&path)?;
            ("gen-data", json!({ "dataset": path, "samples": wb.dataset().len() }))
        }
        Command::TrainAe => {
            let wb = artifacts.workbench(cfg.clone())?;
            for l in [cfg.autoencoder.lambda_tc, 0.0] {
                artifacts.autoencoder(&wb, l)?;
            }
            ("train-ae", json!({ "models": [experiment::ae_tag(cfg.autoencoder.lambda_tc), experiment::ae_tag(0.0)] }))
        }
        Command::TrainTracker => {
            let wb = artifacts.workbench(cfg.clone())?;
            let train = wb.training_trajectories()?;
            for l in [cfg.autoencoder.lambda_tc, 0.0] {
                let ae = artifacts.autoencoder(&wb, l)?;
                artifacts.tracker(&wb, l, &ae, &train)?;
            }
            ("train-tracker", json!({ "sequences": train.len() }))
        }
        Command::EvalLs => {
            let wb = artifacts.workbench(cfg.clone())?;
            let traj = wb.eval_trajectory()?;
            let obs = wb.eval_observations(&traj)?;
            let ls = experiment::ls_series(&wb, &traj, &obs)?;
            experiment::write_csv(&out.join("ls.csv"), &series_csv("nmse_ls", &ls))?;
            ("eval-ls", json!({ "mean_nmse_ls": ls.iter().sum::<f64>() / ls.len() as f64 }))
        }
        Command::RunAblation => {
            let wb = artifacts.workbench(cfg.clone())?;
            let report = experiment::run_ablation(&wb, &artifacts)?;
            experiment::write_csv(&out.join("ablation.csv"), &report.to_csv())?;
            let (notc, tc) = report.spearman()?;
            ("run-ablation", json!({ "spearman_no_tc": notc, "spearman_tc": tc }))
        }
        Command::RunComparison => {
            let wb = artifacts.workbench(cfg.clone())?;
            let report = experiment::run_comparison(&wb, &artifacts)?;
            experiment::write_csv(&out.join("comparison.csv"), &report.to_csv())?;
            ("run-comparison", json!({ "means": report.means(), "steps": report.len() }))
        }
        Command::RunScaling => {
            let report = experiment::run_scaling(&cfg, out)?;
            experiment::write_csv(&out.join("parameters.csv"), &report.parameters_csv())?;
            let runs: Vec<_> = report
                .runs
                .iter()
                .map(|(p, r)| json!({ "parameters": p, "means": r.means() }))
                .collect();
            ("run-scaling", json!({ "runs": runs }))
        }
        Command::GradCheck { .. } => unreachable!("handled above"),
    };
    experiment::write_manifest(out, name, &cfg, started, results.clone())?;
    Ok(format!("{name}: {}\n", serde_json::to_string_pretty(&results).expect("serializes")))
}
