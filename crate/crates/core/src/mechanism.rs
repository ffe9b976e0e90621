//! Client-level DP noise: sensitivity, Laplace and Gaussian calibration,
//! per-round noise sampling, and closed-form predictors for the variance of
//! the aggregated noise item `w_t^b = (N/b) Σ_{l∈P_t} (n_l/n) w_t^l`.
//!
//! The privacy budget covers all `T_l = b·T_g/N` rounds a client joins, so
//! every noise scale grows with `T_l`. Sensitivities are per round:
//! `Ξ = η̃_t · E · ξ`, where `η̃_t` is the largest rate used in the round.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    None,
    Laplace,
    Gaussian,
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MechanismKind::None => f.write_str("none"),
            MechanismKind::Laplace => f.write_str("laplace"),
            MechanismKind::Gaussian => f.write_str("gaussian"),
        }
    }
}

/// A DP mechanism together with its calibration parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismSpec {
    pub kind: MechanismKind,
    /// Total budget over all rounds; `∞` exactly when `kind` is `None`.
    pub epsilon: f64,
    /// Failure probability (Gaussian only).
    pub delta: f64,
    /// Gaussian calibration constant.
    pub c2: f64,
    /// Per-client sampling probability; full-batch updates mean `q = 1`.
    pub q: f64,
    /// L1 gradient sensitivity.
    pub xi1: f64,
    /// L2 gradient bound.
    pub xi2: f64,
}

impl MechanismSpec {
    pub fn none() -> Self {
        MechanismSpec {
            kind: MechanismKind::None,
            epsilon: f64::INFINITY,
            delta: 0.0,
            c2: 0.0,
            q: 1.0,
            xi1: 0.0,
            xi2: 0.0,
        }
    }

    pub fn laplace(epsilon: f64, xi1: f64) -> Result<Self> {
        let spec = MechanismSpec {
            kind: MechanismKind::Laplace,
            epsilon,
            xi1,
            ..MechanismSpec::none()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(epsilon: f64, delta: f64, c2: f64, xi2: f64) -> Result<Self> {
        let spec = MechanismSpec {
            kind: MechanismKind::Gaussian,
            epsilon,
            delta,
            c2,
            xi2,
            ..MechanismSpec::none()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        let spec = MechanismSpec { epsilon, ..self };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.q != 1.0 {
            return Err(Error::config(format!(
                "sampling probability q must be 1 for full-batch updates, got {}",
                self.q
            )));
        }
        match self.kind {
            MechanismKind::None => {
                if self.epsilon != f64::INFINITY {
                    return Err(Error::config("mechanism none requires epsilon = inf"));
                }
            }
            MechanismKind::Laplace | MechanismKind::Gaussian => {
                if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
                    return Err(Error::config(format!(
                        "epsilon must be positive and finite for {}, got {}",
                        self.kind, self.epsilon
                    )));
                }
            }
        }
        match self.kind {
            MechanismKind::Laplace if !(self.xi1 > 0.0) => {
                Err(Error::config("laplace requires xi1 > 0"))
            }
            MechanismKind::Gaussian if !(self.delta > 0.0 && self.delta < 1.0) => Err(
                Error::config(format!("delta must lie in (0, 1), got {}", self.delta)),
            ),
            MechanismKind::Gaussian if !(self.c2 > 0.0) => {
                Err(Error::config("gaussian requires c2 > 0"))
            }
            MechanismKind::Gaussian if !(self.xi2 > 0.0) => {
                Err(Error::config("gaussian requires xi2 > 0"))
            }
            _ => Ok(()),
        }
    }
}

/// Federation shape and round-specific quantities the noise depends on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseContext {
    /// Parameter dimension `p`.
    pub dim: usize,
    /// `η̃_t`, the largest learning rate within the round.
    pub eta_tilde: f64,
    pub local_iters: u64,
    /// `T_l = b·T_g/N`.
    pub rounds_per_client: u64,
    pub global_iters: u64,
    pub pool_size: usize,
    pub clients: usize,
    pub total_samples: usize,
    /// `n̄² = (1/N) Σ n_l²`.
    pub n_bar_sq: f64,
}

impl NoiseContext {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dim: usize,
        eta_tilde: f64,
        local_iters: u64,
        global_iters: u64,
        pool_size: usize,
        clients: usize,
        total_samples: usize,
        n_bar_sq: f64,
    ) -> Result<Self> {
        if !(eta_tilde > 0.0) || !eta_tilde.is_finite() {
            return Err(Error::config(format!("eta_tilde must be positive, got {eta_tilde}")));
        }
        if local_iters == 0 || global_iters == 0 {
            return Err(Error::config("local and global iteration counts must be ≥ 1"));
        }
        if pool_size == 0 || pool_size > clients {
            return Err(Error::config(format!(
                "pool size {pool_size} must lie in [1, {clients}]"
            )));
        }
        let rounds = pool_size as u64 * global_iters;
        if !rounds.is_multiple_of(clients as u64) {
            return Err(Error::config(format!(
                "b·T_g = {rounds} is not a multiple of N = {clients}; T_l must be an integer"
            )));
        }
        Ok(NoiseContext {
            dim,
            eta_tilde,
            local_iters,
            rounds_per_client: rounds / clients as u64,
            global_iters,
            pool_size,
            clients,
            total_samples,
            n_bar_sq,
        })
    }

    pub fn with_eta_tilde(self, eta_tilde: f64) -> Self {
        NoiseContext { eta_tilde, ..self }
    }
}

/// `Ξ1 = η̃_t · E · ξ1`
pub fn sensitivity_l1(ctx: &NoiseContext, xi1: f64) -> f64 {
    ctx.eta_tilde * ctx.local_iters as f64 * xi1
}

/// `Ξ2 = η̃_t · E · ξ2`
pub fn sensitivity_l2(ctx: &NoiseContext, xi2: f64) -> f64 {
    ctx.eta_tilde * ctx.local_iters as f64 * xi2
}

/// Per-coordinate Laplace scale `T_l · Ξ1 / ε`.
pub fn laplace_scale(ctx: &NoiseContext, spec: &MechanismSpec) -> Result<f64> {
    if spec.kind != MechanismKind::Laplace {
        return Err(Error::config("laplace_scale needs a laplace mechanism"));
    }
    spec.validate()?;
    Ok(ctx.rounds_per_client as f64 * sensitivity_l1(ctx, spec.xi1) / spec.epsilon)
}

/// `σ = c2 · q · sqrt(T_l · ln(1/δ)) / ε`; the noise std is `σ · Ξ2`.
pub fn gaussian_sigma(ctx: &NoiseContext, spec: &MechanismSpec) -> Result<f64> {
    if spec.kind != MechanismKind::Gaussian {
        return Err(Error::config("gaussian_sigma needs a gaussian mechanism"));
    }
    spec.validate()?;
    Ok(spec.c2 * spec.q * (ctx.rounds_per_client as f64 * (1.0 / spec.delta).ln()).sqrt()
        / spec.epsilon)
}

/// The Gaussian composition guarantee needs `ε < c1 · q² · T_l` for a
/// constant `c1` that is never given numerically. Budgets beyond `q² · T_l`
/// (taking `c1 = 1`) are flagged rather than rejected.
pub fn composition_warning(ctx: &NoiseContext, spec: &MechanismSpec) -> Option<String> {
    let limit = spec.q * spec.q * ctx.rounds_per_client as f64;
    (spec.kind == MechanismKind::Gaussian && spec.epsilon >= limit).then(|| {
        format!(
            "epsilon = {} is not small relative to q²·T_l = {limit}; the Gaussian calibration may not guarantee the budget",
            spec.epsilon
        )
    })
}

/// Per-coordinate noise scale: Laplace `β`, Gaussian standard deviation, or 0.
pub fn noise_scale(ctx: &NoiseContext, spec: &MechanismSpec) -> Result<f64> {
    match spec.kind {
        MechanismKind::None => Ok(0.0),
        MechanismKind::Laplace => laplace_scale(ctx, spec),
        MechanismKind::Gaussian => {
            Ok(gaussian_sigma(ctx, spec)? * sensitivity_l2(ctx, spec.xi2))
        }
    }
}

/// Draws one client's noise vector `w_t^l` of dimension `p`.
pub fn sample_noise<R: Rng + ?Sized>(
    spec: &MechanismSpec,
    ctx: &NoiseContext,
    rng: &mut R,
) -> Result<ParamVector> {
    let scale = noise_scale(ctx, spec)?;
    let values = (0..ctx.dim).map(|_| draw_coordinate(spec.kind, scale, rng)).collect();
    Ok(ParamVector::from_raw(values))
}

/// One noise coordinate with the given per-coordinate scale.
pub fn draw_coordinate<R: Rng + ?Sized>(kind: MechanismKind, scale: f64, rng: &mut R) -> f64 {
    match kind {
        MechanismKind::None => 0.0,
        MechanismKind::Laplace => sample_laplace(rng, scale),
        MechanismKind::Gaussian => scale * rng.sample::<f64, _>(StandardNormal),
    }
}

/// Laplace(0, scale) as a symmetric exponential.
fn sample_laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let magnitude: f64 = rng.sample(Exp1);
    if rng.random::<bool>() {
        scale * magnitude
    } else {
        -scale * magnitude
    }
}

const NOISE_DOMAIN: u64 = 0x6e6f_6973_655f_7374;

/// Counter-based noise stream for `(seed, round, client)`.
///
/// The key depends only on the seed and the ChaCha stream id on the
/// `(round, client)` pair, so draws never depend on scheduling order.
pub fn noise_stream(seed: u64, round: u64, client: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ NOISE_DOMAIN);
    rng.set_stream((round << 32) ^ client);
    rng
}

/// Which closed form to use for the Gaussian noise-item variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// Second moment of a zero-mean Gaussian, `(σΞ2)²` per coordinate.
    #[default]
    Exact,
    /// The published closed form, which carries an extra factor of 2.
    Paper,
}

/// Predicted `E‖w_t^b‖₂²`, averaged over a full round-robin cycle.
///
/// Laplace: `2 p b Ξ1² T_g² n̄² / (n² ε²)`.
/// Gaussian (paper): `2 p c2² N ln(1/δ) Ξ2² T_g n̄² / (n² ε²)`; exact mode
/// drops the leading 2.
pub fn noise_item_variance(spec: &MechanismSpec, ctx: &NoiseContext, mode: VarianceMode) -> f64 {
    let p = ctx.dim as f64;
    let n_sq = (ctx.total_samples as f64).powi(2);
    let t_g = ctx.global_iters as f64;
    match spec.kind {
        MechanismKind::None => 0.0,
        MechanismKind::Laplace => {
            let xi = sensitivity_l1(ctx, spec.xi1);
            2.0 * p * ctx.pool_size as f64 * xi * xi * t_g * t_g * ctx.n_bar_sq
                / (n_sq * spec.epsilon * spec.epsilon)
        }
        MechanismKind::Gaussian => {
            let xi = sensitivity_l2(ctx, spec.xi2);
            let factor = match mode {
                VarianceMode::Exact => 1.0,
                VarianceMode::Paper => 2.0,
            };
            factor * p * spec.c2 * spec.c2 * ctx.clients as f64 * (1.0 / spec.delta).ln() * xi * xi
                * t_g
                * ctx.n_bar_sq
                / (n_sq * spec.epsilon * spec.epsilon)
        }
    }
}

/// Growth exponent `z` of the noise-item variance in `T_g`.
pub fn asymptotic_z(kind: MechanismKind) -> Result<f64> {
    match kind {
        MechanismKind::Laplace => Ok(2.0),
        MechanismKind::Gaussian => Ok(1.0),
        MechanismKind::None => Err(Error::config(
            "asymptotic exponent is undefined without a noise mechanism",
        )),
    }
}

/// Validates a user-declared exponent for a custom mechanism.
pub fn check_exponent(z: f64) -> Result<f64> {
    if (0.0..=2.0).contains(&z) {
        Ok(z)
    } else {
        Err(Error::config(format!("mechanism exponent z must lie in [0, 2], got {z}")))
    }
}
