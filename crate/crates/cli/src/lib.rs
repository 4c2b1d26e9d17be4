//! Command-line front end for anchorlab: spec parsing, the (method, seed)
//! runner, summaries, and the coverage, dynamics and gradient-check tools.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod runner;
pub mod spec;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anchorlab_core::dynamics::{reports_to_csv, standard_suite};
use anchorlab_core::env::{generate_tree, EnvConfig, ReasoningTree};
use anchorlab_core::gradcheck::run_suite;
use anchorlab_core::LogitTable;
use clap::{Args, Parser, Subcommand};

use crate::error::CliError;
use crate::runner::{run_spec, stamp, summarize_dir, write_file, RunOptions};
use crate::spec::{resolve_seeds, ExperimentSpec};

/// Gradient-check tolerance on the max relative error.
pub const GRADCHECK_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(
    name = "anchorlab",
    version,
    about = "Anchored policy optimization lab on synthetic reasoning trees"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every (method, seed) cell of a spec and summarize.
    Train(TrainArgs),
    /// Run the closed-form and bandit dynamics scenarios.
    Dynamics(DynamicsArgs),
    /// Teacher-forced Top-K recall of a model on a generated tree.
    Coverage(CoverageArgs),
    /// Finite-difference verification of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Aggregate per-seed metrics into per-method tables.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the spec file's output_dir.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds; overrides ANCHORLAB_SEED and the spec file.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub no_timestamp: bool,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct DynamicsArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    /// Directory for dynamics.csv; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_timestamp: bool,
}

#[derive(Debug, Args)]
pub struct CoverageArgs {
    /// Tree file in the tree text format; generated when absent.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Logit table to score; the tree's reference when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,4,8,16")]
    pub k: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub depth: usize,
    #[arg(long, default_value_t = 16)]
    pub branching: usize,
    #[arg(long, default_value_t = 16)]
    pub leaves: usize,
    #[arg(long, default_value_t = 1.5)]
    pub concentration: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random cases per kernel.
    #[arg(long, default_value_t = 1000)]
    pub cases: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Experiment directory `<out>/<name>`; derived from --spec when absent.
    #[arg(long)]
    pub dir: Option<PathBuf>,
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub no_timestamp: bool,
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn load_spec(path: &PathBuf) -> Result<ExperimentSpec, CliError> {
    ExperimentSpec::parse(&read(path)?, &path.display().to_string())
}

/// Executes a command and returns what it prints to stdout.
pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Train(a) => {
            let spec = load_spec(&a.spec)?;
            let env_seed = std::env::var("ANCHORLAB_SEED").ok();
            let opts = RunOptions {
                out_dir: a.out.unwrap_or_else(|| spec.output_dir.clone()),
                seeds: resolve_seeds(a.seeds.as_deref(), env_seed.as_deref(), &spec.seeds)?,
                timestamp: !a.no_timestamp,
                jobs: a.jobs,
            };
            let dir = run_spec(&spec, &opts)?;
            Ok(read(&dir.join("summary.csv"))?)
        }
        Command::Dynamics(a) => {
            let csv = stamp(!a.no_timestamp) + &reports_to_csv(&standard_suite(a.seed, a.steps)?);
            match a.out {
                Some(dir) => {
                    write_file(&dir.join("dynamics.csv"), &csv)?;
                    Ok(String::new())
                }
                None => Ok(csv),
            }
        }
        Command::Coverage(a) => {
            let tree = match &a.tree {
                Some(p) => ReasoningTree::from_text(&read(p)?)?,
                None => generate_tree(&EnvConfig {
                    depth: a.depth,
                    branching: a.branching,
                    num_valid_leaves: a.leaves,
                    ref_concentration: a.concentration,
                    ref_noise: a.noise,
                    seed: a.seed,
                })?,
            };
            let model = match &a.model {
                Some(p) => LogitTable::from_text(&read(p)?)?,
                None => tree.ref_policy().clone(),
            };
            let mut out = String::from("k,recall,loss_rate\n");
            for row in tree.oracle_coverage(&model, &a.k)? {
                let _ = writeln!(out, "{},{},{}", row.k, row.recall, row.loss_rate);
            }
            Ok(out)
        }
        Command::Gradcheck(a) => {
            let rows = run_suite(a.cases, a.seed)?;
            let mut out = String::from("kernel,cases,max_rel_error\n");
            for r in &rows {
                let _ = writeln!(out, "{},{},{:e}", r.kernel, r.cases, r.max_rel_error);
            }
            if let Some(bad) = rows.iter().find(|r| !(r.max_rel_error < GRADCHECK_TOL)) {
                print!("{out}");
                return Err(CliError::Failed(format!(
                    "{} max relative error {:e} exceeds {GRADCHECK_TOL:e}",
                    bad.kernel, bad.max_rel_error
                )));
            }
            Ok(out)
        }
        Command::Summarize(a) => {
            let dir = match (a.dir, a.spec) {
                (Some(d), _) => d,
                (None, Some(spec)) => {
                    let spec = load_spec(&spec)?;
                    a.out
                        .unwrap_or_else(|| spec.output_dir.clone())
                        .join(&spec.name)
                }
                (None, None) => {
                    return Err(CliError::Failed("summarize needs --dir or --spec".into()))
                }
            };
            summarize_dir(&dir, !a.no_timestamp)?;
            Ok(read(&dir.join("summary.csv"))?)
        }
    }
}
