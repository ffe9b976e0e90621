//! Convergence bound for DP-FedAvg under the decaying schedule
//! `η_k = 2 / (μ (k + γ))`, and the iteration-tuning rules derived from it.
//!
//! The bound on `Y_k = ‖θ̄_k − θ*‖²` is
//!
//! ```text
//! Y_k ≤ (1/(k+γ)) ((4/μ²) ω0 + γ Y_0) + (4/μ²) (t / (k+γ−1)²) ω1,   t = ⌊k/E⌋
//! ω0  = 6λΓ + 8(E−1)²G² + 4E²G² (N−b)/((N−1) b)
//! ω1  = C_M E² T_g^z
//! ```
//!
//! where `C_M` depends on the mechanism and `z` is the growth exponent of the
//! noise-item variance (2 for Laplace, 1 for Gaussian).

use crate::error::{Error, Result};
use crate::math::ProblemConstants;
use crate::mechanism::{asymptotic_z, MechanismKind, MechanismSpec};

/// `ω0`, the noise-free part of the bound.
pub fn omega0(lambda: f64, gamma_noniid: f64, local_iters: u64, g_bound: f64, clients: usize, pool_size: usize) -> f64 {
    let e = local_iters as f64;
    let g2 = g_bound * g_bound;
    let sampling = if pool_size >= clients {
        0.0
    } else {
        let (n, b) = (clients as f64, pool_size as f64);
        4.0 * e * e * g2 * (n - b) / ((n - 1.0) * b)
    };
    6.0 * lambda * gamma_noniid + 8.0 * (e - 1.0).powi(2) * g2 + sampling
}

/// Mechanism constant `C_M`; zero without noise.
pub fn c_mechanism(spec: &MechanismSpec, dim: usize, pool_size: usize, clients: usize) -> f64 {
    let p = dim as f64;
    let n = clients as f64;
    let eps2 = spec.epsilon * spec.epsilon;
    match spec.kind {
        MechanismKind::None => 0.0,
        MechanismKind::Laplace => 8.0 * p * pool_size as f64 * spec.xi1 * spec.xi1 / (n * n * eps2),
        MechanismKind::Gaussian => {
            8.0 * p * spec.c2 * spec.c2 * (1.0 / spec.delta).ln() * spec.xi2 * spec.xi2 / (n * eps2)
        }
    }
}

/// `γ = max(8λ/μ, E)`
pub fn schedule_offset(mu: f64, lambda: f64, local_iters: u64) -> f64 {
    (8.0 * lambda / mu).max(local_iters as f64)
}

/// Federation shape used by the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub local_iters: u64,
    pub global_iters: u64,
    pub clients: usize,
    pub pool_size: usize,
    pub dim: usize,
}

/// Everything needed to evaluate the convergence bound.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundParams {
    pub mu: f64,
    pub lambda: f64,
    pub gamma_noniid: f64,
    pub g_bound: f64,
    pub omega0: f64,
    pub omega1: f64,
    pub c_m: f64,
    pub z: f64,
    /// Schedule offset `γ`.
    pub gamma: f64,
    pub shape: Shape,
}

impl BoundParams {
    pub fn new(constants: &ProblemConstants, spec: &MechanismSpec, shape: Shape) -> Result<Self> {
        constants.require_assumptions()?;
        let z = match spec.kind {
            MechanismKind::None => 0.0,
            kind => asymptotic_z(kind)?,
        };
        let c_m = c_mechanism(spec, shape.dim, shape.pool_size, shape.clients);
        let e = shape.local_iters as f64;
        let omega1 = c_m * e * e * (shape.global_iters as f64).powf(z);
        Ok(BoundParams {
            mu: constants.mu,
            lambda: constants.lambda,
            gamma_noniid: constants.gamma_noniid,
            g_bound: constants.g_bound,
            omega0: omega0(
                constants.lambda,
                constants.gamma_noniid,
                shape.local_iters,
                constants.g_bound,
                shape.clients,
                shape.pool_size,
            ),
            omega1,
            c_m,
            z,
            gamma: schedule_offset(constants.mu, constants.lambda, shape.local_iters),
            shape,
        })
    }
}

/// Upper bound on `Y_k` after `k` iterations.
pub fn convergence_bound(k: u64, bp: &BoundParams, y0: f64) -> f64 {
    let kf = k as f64;
    let scale = 4.0 / (bp.mu * bp.mu);
    let t = (k / bp.shape.local_iters) as f64;
    let base = (scale * bp.omega0 + bp.gamma * y0) / (kf + bp.gamma);
    if t == 0.0 || bp.omega1 == 0.0 {
        return base;
    }
    let denom = kf + bp.gamma - 1.0;
    base + scale * t / (denom * denom) * bp.omega1
}

/// `(k, bound)` at every aggregation point `k = E, 2E, …, T`.
pub fn bound_curve(bp: &BoundParams, y0: f64) -> Vec<(u64, f64)> {
    let e = bp.shape.local_iters;
    (1..=bp.shape.global_iters)
        .map(|t| (t * e, convergence_bound(t * e, bp, y0)))
        .collect()
}

/// `round(T^{z/(z+1)})` clamped to `[1, T]`, before divisor adjustment.
pub fn raw_local_iterations(total_iters: u64, z: f64) -> u64 {
    let raw = (total_iters as f64).powf(z / (z + 1.0)).round() as u64;
    raw.clamp(1, total_iters.max(1))
}

/// Divisor of `total` closest to `target`; ties go to the smaller divisor.
pub fn nearest_divisor(total: u64, target: u64) -> u64 {
    (1..=total)
        .filter(|d| total.is_multiple_of(*d))
        .min_by_key(|d| (d.abs_diff(target), *d))
        .unwrap_or(1)
}

/// Local-iteration count `E ≈ T^{z/(z+1)}` that minimises the noise penalty,
/// adjusted to divide `T`.
pub fn optimal_local_iterations(total_iters: u64, z: f64) -> Result<u64> {
    if total_iters == 0 {
        return Err(Error::config("total iterations must be ≥ 1"));
    }
    crate::mechanism::check_exponent(z)?;
    Ok(nearest_divisor(total_iters, raw_local_iterations(total_iters, z)))
}

/// Exponent of the best achievable rate `O(T^{(z−1)/(z+1)})`.
pub fn rate_exponent(z: f64) -> f64 {
    (z - 1.0) / (z + 1.0)
}

/// Qualitative long-run behaviour implied by a rate exponent.
pub fn rate_regime(exponent: f64) -> &'static str {
    if exponent < 0.0 {
        "converges to 0"
    } else if exponent == 0.0 {
        "converges to O(1)"
    } else {
        "diverges"
    }
}

/// Bound value at the end of training (`k = T`, `t = T_g`) for a total
/// iteration budget, holding `E` fixed.
pub fn final_bound(constants: &ProblemConstants, spec: &MechanismSpec, shape: Shape) -> Result<f64> {
    let bp = BoundParams::new(constants, spec, shape)?;
    Ok(convergence_bound(shape.local_iters * shape.global_iters, &bp, constants.y0))
}

/// Grid search for the total iteration count minimising the final bound.
/// Returns `(T*, bound)`; candidates must be multiples of `E`.
pub fn optimal_total_iterations(
    constants: &ProblemConstants,
    spec: &MechanismSpec,
    shape: Shape,
    candidates: &[u64],
) -> Result<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for &total in candidates {
        if total == 0 || total % shape.local_iters != 0 {
            return Err(Error::config(format!(
                "candidate T = {total} is not a positive multiple of E = {}",
                shape.local_iters
            )));
        }
        let at = Shape {
            global_iters: total / shape.local_iters,
            ..shape
        };
        let value = final_bound(constants, spec, at)?;
        if best.is_none_or(|(_, v)| value < v) {
            best = Some((total, value));
        }
    }
    best.ok_or_else(|| Error::config("empty candidate grid"))
}
