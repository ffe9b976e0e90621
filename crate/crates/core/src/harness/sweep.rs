//! One-dimensional parameter sweeps, one seed-averaged run per grid point.

use std::path::Path;

use crate::analysis::nearest_divisor;
use crate::error::{Error, Result};
use crate::harness::config::{SweepAxis, SweepSection, SweepValue};
use crate::harness::run::{opt, run_repeats, summarize, write_table, RunSummary};
use crate::harness::Experiment;

pub const SWEEP_HEADER: [&str; 6] = [
    "axis",
    "value",
    "mean_final_loss",
    "std_final_loss",
    "mean_final_y",
    "diverged_runs",
];

/// How `E` is derived from `T` on the `E_rule` axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalIterRule {
    Constant(u64),
    /// `E ≈ T^a`, moved to the nearest divisor of `T`.
    Power(f64),
}

impl LocalIterRule {
    pub fn parse(text: &str) -> Result<Self> {
        let cleaned: String = text.chars().filter(|c| !c.is_whitespace() && *c != '{' && *c != '}').collect();
        let bad = || Error::config(format!("unrecognised E rule {text:?}; expected 1, T, or T^a/b"));
        if cleaned == "T" {
            return Ok(LocalIterRule::Power(1.0));
        }
        if let Some(exp) = cleaned.strip_prefix("T^") {
            let a = match exp.split_once('/') {
                Some((num, den)) => {
                    let num: f64 = num.parse().map_err(|_| bad())?;
                    let den: f64 = den.parse().map_err(|_| bad())?;
                    num / den
                }
                None => exp.parse().map_err(|_| bad())?,
            };
            if !(0.0..=1.0).contains(&a) {
                return Err(bad());
            }
            return Ok(LocalIterRule::Power(a));
        }
        match cleaned.parse::<u64>() {
            Ok(e) if e >= 1 => Ok(LocalIterRule::Constant(e)),
            _ => Err(bad()),
        }
    }

    /// Local-iteration count for a total of `total` iterations.
    pub fn resolve(&self, total: u64) -> Result<u64> {
        match *self {
            LocalIterRule::Constant(e) => {
                if !total.is_multiple_of(e) {
                    return Err(Error::config(format!("E = {e} does not divide T = {total}")));
                }
                Ok(e)
            }
            LocalIterRule::Power(a) => {
                let raw = ((total as f64).powf(a).round() as u64).clamp(1, total);
                Ok(nearest_divisor(total, raw))
            }
        }
    }
}

/// A resolved grid point.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub label: String,
    pub local_iters: u64,
    pub total_iters: u64,
    pub epsilon: f64,
    pub experiment: Experiment,
}

/// Summary of one grid point.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub point: GridPoint,
    pub summary: RunSummary,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Row with the lowest mean final loss, if any finished.
    pub argmin: Option<usize>,
}

fn as_count(v: &SweepValue, what: &str) -> Result<u64> {
    match v {
        SweepValue::Number(x) if *x >= 1.0 && x.fract() == 0.0 => Ok(*x as u64),
        other => Err(Error::config(format!("sweep {what} value {other} must be a positive integer"))),
    }
}

fn shape_for(base: &Experiment, local_iters: u64, total: u64) -> Result<Experiment> {
    if !total.is_multiple_of(local_iters) {
        return Err(Error::config(format!("E = {local_iters} does not divide T = {total}")));
    }
    base.reshape(local_iters, total / local_iters)
}

/// Resolves and validates every grid point before anything runs.
pub fn grid(base: &Experiment, spec: &SweepSection) -> Result<Vec<GridPoint>> {
    let f = &base.federation;
    let default_total = spec.total_iters.unwrap_or(f.local_iters * f.global_iters);
    let epsilon = base.config.dp.epsilon;
    spec.values
        .iter()
        .map(|v| {
            let (local_iters, total, eps) = match spec.axis {
                SweepAxis::T => (f.local_iters, as_count(v, "T")?, epsilon),
                SweepAxis::E => (as_count(v, "E")?, default_total, epsilon),
                SweepAxis::ERule => {
                    let rule = match v {
                        SweepValue::Number(_) => LocalIterRule::Constant(as_count(v, "E")?),
                        SweepValue::Rule(r) => LocalIterRule::parse(r)?,
                    };
                    (rule.resolve(default_total)?, default_total, epsilon)
                }
                SweepAxis::Epsilon => match v {
                    SweepValue::Number(e) if *e > 0.0 => (f.local_iters, f.local_iters * f.global_iters, *e),
                    SweepValue::Rule(r) if r.eq_ignore_ascii_case("inf") => {
                        (f.local_iters, f.local_iters * f.global_iters, f64::INFINITY)
                    }
                    other => return Err(Error::config(format!("sweep epsilon value {other} must be > 0 or inf"))),
                },
            };
            let experiment = shape_for(base, local_iters, total)
                .and_then(|e| e.with_epsilon(eps))
                .map_err(|e| Error::config(format!("sweep point {v}: {e}")))?;
            Ok(GridPoint {
                label: v.to_string(),
                local_iters,
                total_iters: total,
                epsilon: eps,
                experiment,
            })
        })
        .collect()
}

/// Runs every grid point. Each point reuses the base seeds, so rows do not
/// depend on which other points are in the grid.
pub fn run_sweep(base: &Experiment, spec: &SweepSection) -> Result<SweepResult> {
    let points = grid(base, spec)?;
    let mut rows = Vec::with_capacity(points.len());
    for point in points {
        let runs = point.experiment.install(|| run_repeats(&point.experiment))??;
        rows.push(SweepRow {
            axis: spec.axis,
            summary: summarize(&runs),
            point,
        });
    }
    let argmin = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.summary.mean_final_loss.is_finite())
        .min_by(|a, b| a.1.summary.mean_final_loss.total_cmp(&b.1.summary.mean_final_loss))
        .map(|(i, _)| i);
    Ok(SweepResult { rows, argmin })
}

pub fn sweep_rows(result: &SweepResult) -> Vec<Vec<String>> {
    result
        .rows
        .iter()
        .map(|r| {
            vec![
                r.axis.to_string(),
                r.point.label.clone(),
                r.summary.mean_final_loss.to_string(),
                r.summary.std_final_loss.to_string(),
                opt(r.summary.mean_final_y),
                r.summary.diverged_runs.to_string(),
            ]
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, result: &SweepResult) -> Result<()> {
    write_table(path, &SWEEP_HEADER, &sweep_rows(result))
}

/// Human-readable table with the argmin marked by `*`.
pub fn render(result: &SweepResult) -> String {
    let mut out = String::from("axis  value  E  T  mean_final_loss  std  diverged\n");
    for (i, r) in result.rows.iter().enumerate() {
        let mark = if Some(i) == result.argmin { " *" } else { "" };
        out.push_str(&format!(
            "{}  {}  {}  {}  {}  {}  {}{}\n",
            r.axis,
            r.point.label,
            r.point.local_iters,
            r.point.total_iters,
            r.summary.mean_final_loss,
            r.summary.std_final_loss,
            r.summary.diverged_runs,
            mark
        ));
    }
    out
}
