//! Planner report: calibration values, predicted noise variance, bound
//! constants and the iteration-tuning recommendations for a config.

use std::fmt;

use crate::analysis::{bound_curve, optimal_local_iterations, rate_exponent, rate_regime};
use crate::error::Result;
use crate::harness::Experiment;
use crate::mechanism::{
    asymptotic_z, composition_warning, gaussian_sigma, laplace_scale, noise_item_variance, MechanismKind, VarianceMode,
};

/// Ordered `key = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanReport {
    pub entries: Vec<(String, String)>,
}

impl PlanReport {
    fn push(&mut self, key: &str, value: impl fmt::Display) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl fmt::Display for PlanReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

pub fn plan(exp: &Experiment) -> Result<PlanReport> {
    let mut r = PlanReport::default();
    let fed = &exp.federation;
    let c = &exp.constants;
    let spec = &fed.mechanism;
    let total = fed.total_iters();

    r.push("mechanism", spec.kind);
    r.push("clients", fed.clients);
    r.push("pool_size", fed.pool_size);
    r.push("local_iters", fed.local_iters);
    r.push("global_iters", fed.global_iters);
    r.push("total_iters", total);
    r.push("mu", c.mu);
    r.push("lambda", c.lambda);
    r.push("gamma_noniid", c.gamma_noniid);
    r.push("g_bound", c.g_bound);
    r.push("y0", c.y0);
    r.push("f_star", c.f_star);
    if let crate::math::Assumptions::Violated(why) = &c.assumptions {
        r.push("assumptions", format!("violated: {why}"));
    }

    if spec.kind == MechanismKind::None {
        let exponent = rate_exponent(0.0);
        r.push("z", 0);
        r.push("rate_exponent", exponent);
        r.push("regime", rate_regime(exponent));
    } else {
        let z = asymptotic_z(spec.kind)?;
        let exponent = rate_exponent(z);
        r.push("epsilon", spec.epsilon);
        r.push("z", z);
        r.push("rate_exponent", exponent);
        r.push("regime", rate_regime(exponent));
        r.push("optimal_local_iters", optimal_local_iterations(total, z)?);
        let ctx = exp.noise_context(0)?;
        r.push("rounds_per_client", ctx.rounds_per_client);
        r.push("eta_tilde_0", ctx.eta_tilde);
        match spec.kind {
            MechanismKind::Laplace => {
                r.push("laplace_scale_0", laplace_scale(&ctx, spec)?);
                r.push("noise_variance_0", noise_item_variance(spec, &ctx, VarianceMode::Exact));
            }
            MechanismKind::Gaussian => {
                r.push("gaussian_sigma", gaussian_sigma(&ctx, spec)?);
                r.push("noise_variance_0_exact", noise_item_variance(spec, &ctx, VarianceMode::Exact));
                r.push("noise_variance_0_paper", noise_item_variance(spec, &ctx, VarianceMode::Paper));
                if let Some(w) = composition_warning(&ctx, spec) {
                    r.push("warning", w);
                }
            }
            MechanismKind::None => unreachable!(),
        }
    }

    match exp.bound_params() {
        Some(bp) => {
            r.push("gamma", bp.gamma);
            r.push("c_m", bp.c_m);
            r.push("omega0", bp.omega0);
            r.push("omega1", bp.omega1);
            for (k, b) in bound_curve(&bp, c.y0) {
                r.push(&format!("bound[k={k}]"), b);
            }
        }
        None => r.push("bound", "unavailable (needs the theorem schedule and positive mu)"),
    }
    Ok(r)
}
