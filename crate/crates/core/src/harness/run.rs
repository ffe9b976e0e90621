//! Seed-averaged runs and their CSV output.

use std::path::Path;

use rayon::prelude::*;

use crate::engine::{run_federation, Trajectory};
use crate::error::{Error, Result};
use crate::harness::Experiment;

pub const ROUNDS_HEADER: [&str; 9] = [
    "run_id",
    "seed",
    "t",
    "k",
    "eta_k",
    "global_loss",
    "y_k",
    "bound_y_k",
    "noise_l2",
];

pub const SUMMARY_HEADER: [&str; 9] = [
    "t",
    "k",
    "runs",
    "mean_loss",
    "std_loss",
    "mean_y",
    "std_y",
    "bound_y_k",
    "mean_noise_l2",
];

/// One seeded repeat.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: usize,
    pub seed: u64,
    pub trajectory: Trajectory,
}

/// Per-round statistics across the repeats that reached that round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundStats {
    pub t: u64,
    pub k: u64,
    pub runs: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
    pub mean_y: Option<f64>,
    pub std_y: Option<f64>,
    pub bound_y_k: Option<f64>,
    pub mean_noise_l2: f64,
}

/// Seed-averaged outcome of an experiment.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub repeats: usize,
    pub rounds: Vec<RoundStats>,
    pub diverged_runs: usize,
    /// Final-round loss statistics over the repeats that did not diverge.
    pub mean_final_loss: f64,
    pub std_final_loss: f64,
    pub mean_final_y: Option<f64>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs every repeat with seeds `seed + r`. Repeats may execute in parallel;
/// results come back in repeat order.
pub fn run_repeats(exp: &Experiment) -> Result<Vec<RunResult>> {
    let reference = exp.reference();
    let base = exp.federation.seed;
    (0..exp.repeats)
        .into_par_iter()
        .map(|r| {
            let seed = base.wrapping_add(r as u64);
            let config = crate::engine::FederationConfig {
                seed,
                ..exp.federation.clone()
            };
            let trajectory = run_federation(&config, &exp.dataset.shards, &reference)?;
            Ok(RunResult {
                run_id: r,
                seed,
                trajectory,
            })
        })
        .collect()
}

pub fn summarize(runs: &[RunResult]) -> RunSummary {
    let longest = runs.iter().map(|r| r.trajectory.records.len()).max().unwrap_or(0);
    let mut rounds = Vec::with_capacity(longest);
    for i in 0..longest {
        let recs: Vec<_> = runs.iter().filter_map(|r| r.trajectory.records.get(i)).collect();
        let losses: Vec<f64> = recs.iter().map(|r| r.global_loss).collect();
        let ys: Vec<f64> = recs.iter().filter_map(|r| r.y_k).collect();
        let noises: Vec<f64> = recs.iter().map(|r| r.noise_l2).collect();
        let (mean_loss, std_loss) = mean_std(&losses);
        let (mean_y, std_y) = if ys.len() == recs.len() {
            let (m, s) = mean_std(&ys);
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        rounds.push(RoundStats {
            t: recs[0].t,
            k: recs[0].k,
            runs: recs.len(),
            mean_loss,
            std_loss,
            mean_y,
            std_y,
            bound_y_k: recs[0].bound_y_k,
            mean_noise_l2: mean_std(&noises).0,
        });
    }

    let finished: Vec<&RunResult> = runs.iter().filter(|r| !r.trajectory.diverged).collect();
    let finals: Vec<f64> = finished
        .iter()
        .filter_map(|r| r.trajectory.records.last().map(|x| x.global_loss))
        .collect();
    let final_ys: Vec<f64> = finished
        .iter()
        .filter_map(|r| r.trajectory.records.last().and_then(|x| x.y_k))
        .collect();
    let (mean_final_loss, std_final_loss) = if finals.is_empty() {
        (f64::INFINITY, f64::NAN)
    } else {
        mean_std(&finals)
    };
    RunSummary {
        repeats: runs.len(),
        rounds,
        diverged_runs: runs.len() - finished.len(),
        mean_final_loss,
        std_final_loss,
        mean_final_y: (!final_ys.is_empty() && final_ys.len() == finals.len()).then(|| mean_std(&final_ys).0),
    }
}

/// Runs and summarises an experiment on its configured thread pool.
pub fn run_experiment(exp: &Experiment) -> Result<(Vec<RunResult>, RunSummary)> {
    let runs = exp.install(|| run_repeats(exp))??;
    let summary = summarize(&runs);
    Ok((runs, summary))
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub(crate) fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn rounds_rows(runs: &[RunResult]) -> Vec<Vec<String>> {
    runs.iter()
        .flat_map(|run| {
            run.trajectory.records.iter().map(move |r| {
                vec![
                    run.run_id.to_string(),
                    run.seed.to_string(),
                    r.t.to_string(),
                    r.k.to_string(),
                    r.eta_k.to_string(),
                    r.global_loss.to_string(),
                    opt(r.y_k),
                    opt(r.bound_y_k),
                    r.noise_l2.to_string(),
                ]
            })
        })
        .collect()
}

pub fn summary_rows(summary: &RunSummary) -> Vec<Vec<String>> {
    summary
        .rounds
        .iter()
        .map(|r| {
            vec![
                r.t.to_string(),
                r.k.to_string(),
                r.runs.to_string(),
                r.mean_loss.to_string(),
                r.std_loss.to_string(),
                opt(r.mean_y),
                opt(r.std_y),
                opt(r.bound_y_k),
                r.mean_noise_l2.to_string(),
            ]
        })
        .collect()
}

/// Writes `rounds.csv` and `summary.csv` into `dir`.
pub fn write_run_outputs(dir: &Path, runs: &[RunResult], summary: &RunSummary) -> Result<()> {
    write_table(&dir.join("rounds.csv"), &ROUNDS_HEADER, &rounds_rows(runs))?;
    write_table(&dir.join("summary.csv"), &SUMMARY_HEADER, &summary_rows(summary))
}
