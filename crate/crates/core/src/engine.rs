//! Client-based DP-FedAvg: round-robin pools, clipped local gradient descent,
//! per-client noise at round boundaries and weighted server aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{convergence_bound, BoundParams};
use crate::error::{Error, Result};
use crate::math::{mse_gradient, Clip, ClientShard, ParamVector};
use crate::mechanism::{noise_stream, sample_noise, MechanismKind, MechanismSpec, NoiseContext};

/// Any coordinate beyond this magnitude counts as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// `η_k = 2 / (μ (k + γ))`
pub fn lr_schedule(k: u64, mu: f64, gamma: f64) -> f64 {
    2.0 / (mu * (k as f64 + gamma))
}

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Schedule {
    /// Decaying rate required by the convergence bound.
    Theorem { mu: f64, gamma: f64 },
    Constant { eta: f64 },
}

impl Schedule {
    pub fn rate(&self, k: u64) -> f64 {
        match *self {
            Schedule::Theorem { mu, gamma } => lr_schedule(k, mu, gamma),
            Schedule::Constant { eta } => eta,
        }
    }

    pub fn is_theorem(&self) -> bool {
        matches!(self, Schedule::Theorem { .. })
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Theorem { mu, gamma } if !(mu > 0.0 && gamma >= 1.0) => Err(Error::config(
                format!("theorem schedule needs mu > 0 and gamma ≥ 1 (mu = {mu}, gamma = {gamma})"),
            )),
            Schedule::Constant { eta } if !(eta > 0.0 && eta.is_finite()) => {
                Err(Error::config(format!("constant learning rate must be positive, got {eta}")))
            }
            _ => Ok(()),
        }
    }
}

/// A complete single-run experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub clients: usize,
    pub pool_size: usize,
    pub local_iters: u64,
    pub global_iters: u64,
    pub schedule: Schedule,
    pub clip: Clip,
    pub mechanism: MechanismSpec,
    pub theta_0: ParamVector,
    pub seed: u64,
}

impl FederationConfig {
    pub fn total_iters(&self) -> u64 {
        self.local_iters * self.global_iters
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("federation.clients must be ≥ 1"));
        }
        if self.pool_size == 0 || self.pool_size > self.clients {
            return Err(Error::config(format!(
                "federation.pool_size must lie in [1, {}], got {}",
                self.clients, self.pool_size
            )));
        }
        if !self.clients.is_multiple_of(self.pool_size) {
            return Err(Error::config(format!(
                "federation.pool_size = {} does not divide clients = {}",
                self.pool_size, self.clients
            )));
        }
        if self.local_iters == 0 || self.global_iters == 0 {
            return Err(Error::config("local_iters and global_iters must be ≥ 1"));
        }
        let cycle = (self.clients / self.pool_size) as u64;
        if self.mechanism.kind != MechanismKind::None && !self.global_iters.is_multiple_of(cycle) {
            return Err(Error::config(format!(
                "global_iters = {} must be a multiple of clients/pool_size = {cycle} so that every client joins the same number of rounds",
                self.global_iters
            )));
        }
        self.schedule.validate()?;
        self.mechanism.validate()?;
        if !self.theta_0.is_finite() {
            return Err(Error::config("theta_0 must be finite"));
        }
        Ok(())
    }
}

/// Telemetry for one global iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub t: u64,
    /// Cumulative iteration index `(t + 1)·E`.
    pub k: u64,
    /// First (largest) learning rate of the round.
    pub eta_k: f64,
    pub global_loss: f64,
    pub y_k: Option<f64>,
    pub bound_y_k: Option<f64>,
    /// `‖w_t^b‖₂`, the aggregated noise actually injected.
    pub noise_l2: f64,
}

/// Optional quantities that need the global optimum.
#[derive(Debug, Clone, Default)]
pub struct Reference {
    pub theta_star: Option<ParamVector>,
    /// Bound parameters and `Y_0`; only honoured under the theorem schedule.
    pub bound: Option<(BoundParams, f64)>,
}

/// Result of one run. `records` stops at the last valid round on divergence.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<RoundRecord>,
    pub diverged: bool,
    pub final_theta: ParamVector,
    /// Largest L2 norm of any clipped gradient used in the run.
    pub max_grad_l2: f64,
}

/// Round-robin pool for global iteration `t`.
pub fn select_pool(t: u64, clients: usize, pool_size: usize) -> Result<Vec<usize>> {
    if pool_size == 0 || !clients.is_multiple_of(pool_size) {
        return Err(Error::config(format!(
            "pool size {pool_size} does not divide {clients} clients"
        )));
    }
    let start = ((t % clients as u64) * pool_size as u64 % clients as u64) as usize;
    Ok((0..pool_size).map(|i| (start + i) % clients).collect())
}

/// Local parameters after E steps, plus the largest clipped-gradient norm seen.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub params: ParamVector,
    pub max_grad_l2: f64,
}

/// Every iterate `θ_{tE}, …, θ_{tE+E}` of a client's local descent.
pub fn client_trajectory(
    theta_in: &ParamVector,
    shard: &ClientShard,
    t: u64,
    local_iters: u64,
    schedule: &Schedule,
    clip: &Clip,
) -> Result<Vec<ParamVector>> {
    let mut path = Vec::with_capacity(local_iters as usize + 1);
    path.push(theta_in.clone());
    let mut theta = theta_in.clone();
    for i in 0..local_iters {
        let k = t * local_iters + i;
        let g = clip.apply(&mse_gradient(&theta, shard)?);
        theta.add_scaled(-schedule.rate(k), &g)?;
        if !theta.is_finite() {
            return Err(Error::Divergence { iteration: k });
        }
        path.push(theta.clone());
    }
    Ok(path)
}

/// `E` clipped full-batch gradient steps starting at iteration `tE`.
/// Returns the pre-noise local parameters.
pub fn client_update(
    theta_in: &ParamVector,
    shard: &ClientShard,
    t: u64,
    local_iters: u64,
    schedule: &Schedule,
    clip: &Clip,
) -> Result<LocalUpdate> {
    let mut theta = theta_in.clone();
    let mut max_grad_l2 = 0.0f64;
    for i in 0..local_iters {
        let k = t * local_iters + i;
        let g = clip.apply(&mse_gradient(&theta, shard)?);
        max_grad_l2 = max_grad_l2.max(g.l2_norm());
        theta.add_scaled(-schedule.rate(k), &g)?;
        if !theta.is_finite() {
            return Err(Error::Divergence { iteration: k });
        }
    }
    Ok(LocalUpdate {
        params: theta,
        max_grad_l2,
    })
}

/// One client's contribution to aggregation.
#[derive(Debug, Clone)]
pub struct Upload {
    pub client_id: usize,
    pub params: ParamVector,
    pub samples: usize,
}

/// `(N/b) Σ_{l∈P} (n_l/n) θ̂^l`, summed in ascending client-id order.
pub fn aggregate(uploads: &[Upload], clients: usize, pool_size: usize, total_samples: usize) -> Result<ParamVector> {
    let first = uploads
        .first()
        .ok_or_else(|| Error::config("cannot aggregate an empty pool"))?;
    let mut order: Vec<&Upload> = uploads.iter().collect();
    order.sort_by_key(|u| u.client_id);
    let scale = clients as f64 / pool_size as f64;
    let n = total_samples as f64;
    let mut acc = ParamVector::zeros(first.params.dim());
    for u in order {
        acc.add_scaled(scale * (u.samples as f64 / n), &u.params)?;
    }
    Ok(acc)
}

/// Mean of the pool estimates over one full round-robin cycle, with the
/// per-client parameters held fixed.
pub fn cycle_average(params: &[ParamVector], samples: &[usize], pool_size: usize) -> Result<ParamVector> {
    let clients = params.len();
    if samples.len() != clients {
        return Err(Error::Dimension {
            expected: clients,
            got: samples.len(),
        });
    }
    let total: usize = samples.iter().sum();
    let cycle = clients / pool_size.max(1);
    let mut sum = ParamVector::zeros(params.first().map_or(0, |p| p.dim()));
    for t in 0..cycle as u64 {
        let uploads: Vec<Upload> = select_pool(t, clients, pool_size)?
            .into_iter()
            .map(|l| Upload {
                client_id: l,
                params: params[l].clone(),
                samples: samples[l],
            })
            .collect();
        sum.add_scaled(1.0, &aggregate(&uploads, clients, pool_size, total)?)?;
    }
    Ok(sum.scaled(1.0 / cycle as f64))
}

/// `(1/N) Σ n_l²`
pub fn mean_squared_shard_size(shards: &[ClientShard]) -> f64 {
    shards.iter().map(|s| (s.len() as f64).powi(2)).sum::<f64>() / shards.len() as f64
}

/// Loss of `theta` on the union of all shards.
pub fn global_loss(theta: &ParamVector, shards: &[ClientShard]) -> Result<f64> {
    let mut sse = 0.0;
    let mut n = 0usize;
    for s in shards {
        sse += s.sum_squared_error(theta)?;
        n += s.len();
    }
    Ok(sse / n as f64)
}

fn noise_context(config: &FederationConfig, shards: &[ClientShard], eta_tilde: f64) -> Result<NoiseContext> {
    NoiseContext::new(
        config.theta_0.dim(),
        eta_tilde,
        config.local_iters,
        config.global_iters,
        config.pool_size,
        config.clients,
        shards.iter().map(|s| s.len()).sum(),
        mean_squared_shard_size(shards),
    )
}

fn exceeds_threshold(theta: &ParamVector) -> bool {
    !theta.is_finite() || theta.max_abs() > DIVERGENCE_THRESHOLD
}

/// Runs `T_g` rounds of DP-FedAvg. Deterministic in `(config, shards)`
/// irrespective of how many threads rayon uses.
pub fn run_federation(config: &FederationConfig, shards: &[ClientShard], reference: &Reference) -> Result<Trajectory> {
    config.validate()?;
    if shards.len() != config.clients {
        return Err(Error::config(format!(
            "dataset has {} shards but federation.clients = {}",
            shards.len(),
            config.clients
        )));
    }
    for (i, s) in shards.iter().enumerate() {
        if s.client_id() != i {
            return Err(Error::Data(format!("shard at position {i} has client id {}", s.client_id())));
        }
        if s.dim() != config.theta_0.dim() {
            return Err(Error::Dimension {
                expected: config.theta_0.dim(),
                got: s.dim(),
            });
        }
    }
    let total_samples: usize = shards.iter().map(|s| s.len()).sum();
    let noisy = config.mechanism.kind != MechanismKind::None;
    let bound = reference.bound.as_ref().filter(|_| config.schedule.is_theorem());

    let mut theta = config.theta_0.clone();
    let mut records = Vec::with_capacity(config.global_iters as usize);
    let mut max_grad_l2 = 0.0f64;
    let mut diverged = false;

    for t in 0..config.global_iters {
        let pool = select_pool(t, config.clients, config.pool_size)?;
        let eta_tilde = config.schedule.rate(t * config.local_iters);
        let ctx = if noisy {
            Some(noise_context(config, shards, eta_tilde)?)
        } else {
            None
        };

        let results: Vec<Result<(Upload, ParamVector, f64)>> = pool
            .par_iter()
            .map(|&l| {
                let shard = &shards[l];
                let local = client_update(&theta, shard, t, config.local_iters, &config.schedule, &config.clip)?;
                let mut params = local.params;
                let noise = match &ctx {
                    Some(ctx) => {
                        let mut rng = noise_stream(config.seed, t, l as u64);
                        let w = sample_noise(&config.mechanism, ctx, &mut rng)?;
                        params.add_scaled(1.0, &w)?;
                        w
                    }
                    None => ParamVector::zeros(params.dim()),
                };
                let upload = Upload {
                    client_id: l,
                    params,
                    samples: shard.len(),
                };
                Ok((upload, noise, local.max_grad_l2))
            })
            .collect();

        let mut uploads = Vec::with_capacity(pool.len());
        let mut noises = Vec::with_capacity(pool.len());
        let mut failed = false;
        for r in results {
            match r {
                Ok((u, w, g)) => {
                    max_grad_l2 = max_grad_l2.max(g);
                    noises.push(Upload {
                        client_id: u.client_id,
                        params: w,
                        samples: u.samples,
                    });
                    uploads.push(u);
                }
                Err(Error::Divergence { .. }) => failed = true,
                Err(e) => return Err(e),
            }
        }
        if failed {
            diverged = true;
            break;
        }
        let next = aggregate(&uploads, config.clients, config.pool_size, total_samples)?;
        if exceeds_threshold(&next) {
            diverged = true;
            break;
        }
        theta = next;
        let noise_l2 = if noisy {
            aggregate(&noises, config.clients, config.pool_size, total_samples)?.l2_norm()
        } else {
            0.0
        };

        let k = (t + 1) * config.local_iters;
        let y_k = reference
            .theta_star
            .as_ref()
            .map(|star| theta.sq_distance(star))
            .transpose()?;
        records.push(RoundRecord {
            t,
            k,
            eta_k: eta_tilde,
            global_loss: global_loss(&theta, shards)?,
            y_k,
            bound_y_k: bound.map(|(bp, y0)| convergence_bound(k, bp, *y0)),
            noise_l2,
        });
    }

    Ok(Trajectory {
        records,
        diverged,
        final_theta: theta,
        max_grad_l2,
    })
}

/// Largest clipped-gradient L2 norm over a noise-free run of `config` with
/// seed 0; an empirical stand-in for `G` when clipping does not bound L2.
pub fn pilot_gradient_bound(config: &FederationConfig, shards: &[ClientShard]) -> Result<f64> {
    let pilot = FederationConfig {
        mechanism: MechanismSpec::none(),
        seed: 0,
        ..config.clone()
    };
    Ok(run_federation(&pilot, shards, &Reference::default())?.max_grad_l2)
}
