//! Runs the (method, seed) matrix of a spec and aggregates the results.
//!
//! Layout under `<out>/<spec name>/`:
//!
//! - `<method>/<seed>/metrics.csv` and `<method>/<seed>/steps.jsonl`
//! - `summary.csv`: per-method mean and sample standard deviation over seeds
//!   of every field of the final metric record
//! - `entropy_curves.csv`: `method,seed,step,entropy`
//! - `pareto.csv`: `method,seed,pass1,passK` at the final step, plus one
//!   `mean` row per method

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anchorlab_core::metrics::{records_from_csv, records_to_csv, MetricRecord};
use anchorlab_core::trainer::run_experiment;
use rayon::prelude::*;

use crate::error::CliError;
use crate::spec::ExperimentSpec;

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Prefix CSV outputs with a `# generated_unix=` line.
    pub timestamp: bool,
    pub jobs: usize,
}

/// Optional timestamp header for CSV outputs.
pub fn stamp(timestamp: bool) -> String {
    if !timestamp {
        return String::new();
    }
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    format!("# generated_unix={secs}\n")
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

/// Trains every cell and writes the summaries. Returns the experiment
/// directory.
pub fn run_spec(spec: &ExperimentSpec, opts: &RunOptions) -> Result<PathBuf, CliError> {
    if opts.seeds.is_empty() {
        return Err(CliError::Failed("no seeds to run".into()));
    }
    let exp_dir = opts.out_dir.join(&spec.name);
    let cells: Vec<(usize, u64)> = (0..spec.methods.len())
        .flat_map(|m| opts.seeds.iter().map(move |s| (m, *s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
    pool.install(|| {
        cells
            .par_iter()
            .try_for_each(|(m, seed)| -> Result<(), CliError> {
                let run = run_experiment(&spec.train_config(*m, *seed))?;
                let dir = exp_dir
                    .join(spec.methods[*m].label())
                    .join(seed.to_string());
                write_file(
                    &dir.join("metrics.csv"),
                    &(stamp(opts.timestamp) + &records_to_csv(&run.records)),
                )?;
                write_file(&dir.join("steps.jsonl"), &run.steps_jsonl())
            })
    })?;
    summarize_dir(&exp_dir, opts.timestamp)?;
    Ok(exp_dir)
}

/// Per-method aggregate over seeds of the final metric record.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub n_seeds: usize,
    /// Field order: step, the seven value fields, eval_K.
    pub mean: [f64; 9],
    pub std: [f64; 9],
}

pub const SUMMARY_FIELDS: [&str; 9] = [
    "step",
    "pass1",
    "passK",
    "entropy",
    "maxprob",
    "diversity",
    "support_mass",
    "kl",
    "eval_K",
];

fn record_fields(r: &MetricRecord) -> [f64; 9] {
    let v = r.values();
    [
        r.step as f64,
        v[0],
        v[1],
        v[2],
        v[3],
        v[4],
        v[5],
        v[6],
        r.eval_k as f64,
    ]
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        if entry.path().is_dir() {
            out.push((
                entry.file_name().to_string_lossy().into_owned(),
                entry.path(),
            ));
        }
    }
    out.sort();
    Ok(out)
}

/// Metric records per seed, in seed order.
pub type SeedRuns = Vec<(u64, Vec<MetricRecord>)>;

/// Loads `<method>/<seed>/metrics.csv` under `exp_dir`; methods sorted by
/// name, seeds numerically.
pub fn load_runs(exp_dir: &Path) -> Result<Vec<(String, SeedRuns)>, CliError> {
    let mut methods = Vec::new();
    for (method, mdir) in sorted_subdirs(exp_dir)? {
        let mut seeds = Vec::new();
        for (seed, sdir) in sorted_subdirs(&mdir)? {
            let Ok(seed) = seed.parse::<u64>() else {
                continue;
            };
            let path = sdir.join("metrics.csv");
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            let records = records_from_csv(&text)
                .map_err(|e| CliError::Failed(format!("{}: {e}", path.display())))?;
            if records.is_empty() {
                return Err(CliError::Failed(format!(
                    "{}: no metric rows",
                    path.display()
                )));
            }
            seeds.push((seed, records));
        }
        seeds.sort_by_key(|(s, _)| *s);
        if !seeds.is_empty() {
            methods.push((method, seeds));
        }
    }
    if methods.is_empty() {
        return Err(CliError::Failed(format!(
            "no metrics.csv files under {}",
            exp_dir.display()
        )));
    }
    Ok(methods)
}

/// Writes `summary.csv`, `entropy_curves.csv` and `pareto.csv` for the runs
/// under `exp_dir` and returns the summary rows.
pub fn summarize_dir(exp_dir: &Path, timestamp: bool) -> Result<Vec<SummaryRow>, CliError> {
    let runs = load_runs(exp_dir)?;
    let mut rows = Vec::new();
    let mut summary = stamp(timestamp) + "method,n_seeds";
    for f in SUMMARY_FIELDS {
        let _ = write!(summary, ",{f}_mean,{f}_std");
    }
    summary.push('\n');
    let mut curves = stamp(timestamp) + "method,seed,step,entropy\n";
    let mut pareto = stamp(timestamp) + "method,seed,pass1,passK\n";

    for (method, seeds) in &runs {
        let finals: Vec<[f64; 9]> = seeds
            .iter()
            .map(|(_, r)| record_fields(r.last().expect("nonempty")))
            .collect();
        let mut mean = [0.0; 9];
        let mut std = [0.0; 9];
        for i in 0..9 {
            let col: Vec<f64> = finals.iter().map(|f| f[i]).collect();
            (mean[i], std[i]) = mean_std(&col);
        }
        let _ = write!(summary, "{method},{}", seeds.len());
        for i in 0..9 {
            let _ = write!(summary, ",{},{}", mean[i], std[i]);
        }
        summary.push('\n');
        for (seed, records) in seeds {
            for r in records {
                let _ = writeln!(curves, "{method},{seed},{},{}", r.step, r.mean_entropy);
            }
            let last = records.last().expect("nonempty");
            let _ = writeln!(
                pareto,
                "{method},{seed},{},{}",
                last.pass_at_1, last.pass_at_k
            );
        }
        let _ = writeln!(pareto, "{method},mean,{},{}", mean[1], mean[2]);
        rows.push(SummaryRow {
            method: method.clone(),
            n_seeds: seeds.len(),
            mean,
            std,
        });
    }
    write_file(&exp_dir.join("summary.csv"), &summary)?;
    write_file(&exp_dir.join("entropy_curves.csv"), &curves)?;
    write_file(&exp_dir.join("pareto.csv"), &pareto)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn stamp_is_optional() {
        assert_eq!(stamp(false), "");
        assert!(stamp(true).starts_with("# generated_unix="));
    }
}
