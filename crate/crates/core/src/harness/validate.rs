//! Monte-Carlo check of the closed-form noise-item variance.

use std::fmt;

use rayon::prelude::*;

use crate::engine::select_pool;
use crate::error::{Error, Result};
use crate::harness::Experiment;
use crate::mechanism::{draw_coordinate, noise_item_variance, noise_scale, noise_stream, MechanismKind, VarianceMode};

pub const MIN_DRAWS: u64 = 10_000;
const CHUNK: u64 = 8_192;

/// Relative tolerance for `draws` samples: 1% at 10⁶ draws, widening as
/// `5/sqrt(draws)` below that (5% at 10⁴).
pub fn tolerance(draws: u64) -> f64 {
    (5.0 / (draws as f64).sqrt()).max(0.01)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub mechanism: MechanismKind,
    pub draws: u64,
    pub empirical: f64,
    pub predicted_exact: f64,
    pub predicted_paper: f64,
    pub rel_error_exact: f64,
    pub rel_error_paper: f64,
    pub tolerance: f64,
    /// Judged against the exact predictor.
    pub passed: bool,
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "mechanism = {}", self.mechanism)?;
        writeln!(f, "draws = {}", self.draws)?;
        writeln!(f, "empirical = {}", self.empirical)?;
        writeln!(f, "predicted_exact = {}", self.predicted_exact)?;
        writeln!(f, "predicted_paper = {}", self.predicted_paper)?;
        writeln!(f, "rel_error_exact = {}", self.rel_error_exact)?;
        writeln!(f, "rel_error_paper = {}", self.rel_error_paper)?;
        writeln!(f, "tolerance = {}", self.tolerance)?;
        writeln!(f, "result = {}", if self.passed { "pass" } else { "fail" })
    }
}

fn relative_error(empirical: f64, predicted: f64) -> f64 {
    if predicted == 0.0 {
        if empirical == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (empirical - predicted).abs() / predicted
    }
}

/// Mean of `‖w_t^b‖₂²` over `draws` simulated pool aggregations, with pools
/// cycling round-robin across draws (draw `j` uses round `j`).
pub fn empirical_noise_variance(exp: &Experiment, draws: u64) -> Result<f64> {
    let fed = &exp.federation;
    let ctx = exp.noise_context(0)?;
    let spec = &fed.mechanism;
    if spec.kind == MechanismKind::None {
        return Ok(0.0);
    }
    let scale = noise_scale(&ctx, spec)?;
    let weights: Vec<f64> = exp
        .dataset
        .shards
        .iter()
        .map(|s| fed.clients as f64 / fed.pool_size as f64 * s.len() as f64 / exp.dataset.n as f64)
        .collect();
    let chunks = draws.div_ceil(CHUNK);
    let partial: Vec<Result<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; ctx.dim];
            let mut sum = 0.0;
            for j in c * CHUNK..((c + 1) * CHUNK).min(draws) {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for l in select_pool(j, fed.clients, fed.pool_size)? {
                    let mut rng = noise_stream(fed.seed, j, l as u64);
                    for a in acc.iter_mut() {
                        *a += weights[l] * draw_coordinate(spec.kind, scale, &mut rng);
                    }
                }
                sum += acc.iter().map(|a| a * a).sum::<f64>();
            }
            Ok(sum)
        })
        .collect();
    let mut total = 0.0;
    for p in partial {
        total += p?;
    }
    Ok(total / draws as f64)
}

pub fn validate_noise(exp: &Experiment, draws: u64) -> Result<ValidationReport> {
    if draws < MIN_DRAWS {
        return Err(Error::config(format!("--draws must be ≥ {MIN_DRAWS}, got {draws}")));
    }
    let ctx = exp.noise_context(0)?;
    let spec = &exp.federation.mechanism;
    let empirical = exp.install(|| empirical_noise_variance(exp, draws))??;
    let predicted_exact = noise_item_variance(spec, &ctx, VarianceMode::Exact);
    let predicted_paper = noise_item_variance(spec, &ctx, VarianceMode::Paper);
    let rel_error_exact = relative_error(empirical, predicted_exact);
    let tol = tolerance(draws);
    Ok(ValidationReport {
        mechanism: spec.kind,
        draws,
        empirical,
        predicted_exact,
        predicted_paper,
        rel_error_exact,
        rel_error_paper: relative_error(empirical, predicted_paper),
        tolerance: tol,
        passed: rel_error_exact <= tol,
    })
}
