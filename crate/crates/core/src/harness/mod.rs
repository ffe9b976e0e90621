//! Experiment driver: resolves a config file into a dataset, problem
//! constants and a federation, and runs, sweeps, plans or validates it.

pub mod config;
pub mod oracle;
pub mod plan;
pub mod run;
pub mod sweep;
pub mod validate;

pub use config::ExperimentConfig;

use crate::analysis::{schedule_offset, BoundParams, Shape};
use crate::data::{load_csv, sorted_partition, synth_regression, FederatedDataset, SortKey};
use crate::engine::{pilot_gradient_bound, FederationConfig, Reference, Schedule};
use crate::error::{Error, Result};
use crate::math::{problem_constants, Clip, NormKind, ParamVector, ProblemConstants};
use crate::mechanism::{composition_warning, MechanismKind, MechanismSpec, NoiseContext, VarianceMode};
use config::{DataSource, InitialParams, ScheduleKind, SensitivityRule};

/// A fully resolved experiment ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub dataset: FederatedDataset,
    /// Measured constants with user overrides applied. `g_bound` is resolved
    /// for the current federation shape.
    pub constants: ProblemConstants,
    pub federation: FederationConfig,
    pub repeats: usize,
    pub variance_mode: VarianceMode,
}

/// Builds the training dataset described by the `[data]` section.
pub fn build_dataset(config: &ExperimentConfig) -> Result<FederatedDataset> {
    let d = &config.data;
    let clients = config.federation.clients;
    match d.source {
        DataSource::Synthetic => synth_regression(clients, d.per_client, d.features, d.heterogeneity, d.noise_std, d.seed),
        DataSource::Csv => {
            let path = d.path.as_ref().ok_or_else(|| Error::config("data.path is required"))?;
            let split = load_csv(path, &d.target, &d.feature_columns, d.train_fraction, d.seed)?;
            if split.rejected > 0 {
                eprintln!("warning: skipped {} rows with missing or non-numeric cells", split.rejected);
            }
            let key = match d.sort_by.as_str() {
                "none" => None,
                "target" => Some(SortKey::Target),
                name => {
                    let columns: Vec<String> = if d.feature_columns.is_empty() {
                        csv_feature_names(path, &d.target)?
                    } else {
                        d.feature_columns.clone()
                    };
                    let idx = columns
                        .iter()
                        .position(|c| c == name)
                        .ok_or_else(|| Error::config(format!("data.sort_by = {name:?} is not a feature column")))?;
                    Some(SortKey::Feature(idx))
                }
            };
            match key {
                Some(key) => sorted_partition(&split.train, key, clients, d.bias),
                None => crate::data::contiguous_partition(&split.train, clients, d.bias),
            }
        }
    }
}

fn csv_feature_names(path: &std::path::Path, target: &str) -> Result<Vec<String>> {
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .filter(|h| h != target)
        .collect())
}

fn initial_params(init: &InitialParams, dim: usize) -> Result<ParamVector> {
    match init {
        InitialParams::Fill(v) => ParamVector::new(vec![*v; dim]),
        InitialParams::Values(vs) if vs.len() == dim => ParamVector::new(vs.clone()),
        InitialParams::Values(vs) => Err(Error::config(format!(
            "federation.theta_0 has {} entries but the model has {dim} parameters",
            vs.len()
        ))),
    }
}

/// Mechanism from the `[dp]` section; `ε = ∞` means no noise.
pub fn mechanism_spec(config: &ExperimentConfig, epsilon: f64) -> Result<MechanismSpec> {
    let dp = &config.dp;
    let zeta = config.federation.clip_threshold;
    if dp.mechanism == MechanismKind::None || epsilon.is_infinite() {
        return Ok(MechanismSpec::none());
    }
    let xi1 = dp.xi1.unwrap_or(match dp.sensitivity {
        SensitivityRule::Clip => zeta,
        SensitivityRule::Strict => 2.0 * zeta,
    });
    let xi2 = dp.xi2.unwrap_or(zeta);
    let spec = match dp.mechanism {
        MechanismKind::Laplace => MechanismSpec::laplace(epsilon, xi1)?,
        MechanismKind::Gaussian => MechanismSpec::gaussian(epsilon, dp.delta, dp.c2, xi2)?,
        MechanismKind::None => unreachable!(),
    };
    Ok(MechanismSpec { q: dp.q, ..spec })
}

impl Experiment {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        config.check()?;
        let dataset = build_dataset(config)?;
        Self::with_dataset(config, dataset)
    }

    /// Resolves `config` against an already built dataset.
    pub fn with_dataset(config: &ExperimentConfig, dataset: FederatedDataset) -> Result<Self> {
        config.check()?;
        let f = &config.federation;
        if dataset.clients() != f.clients {
            return Err(Error::config(format!(
                "dataset has {} clients but federation.clients = {}",
                dataset.clients(),
                f.clients
            )));
        }
        let clip = Clip::new(f.clip_threshold, f.clip_norm)?;
        let theta_0 = initial_params(&f.theta_0, dataset.dim())?;
        let mut constants = problem_constants(&dataset.shards, &theta_0, clip)?;
        let s = &config.schedule;
        if let Some(mu) = s.mu {
            constants.mu = mu;
        }
        if let Some(lambda) = s.lambda {
            constants.lambda = lambda;
        }
        if let Some(gamma) = s.gamma_noniid {
            constants.gamma_noniid = gamma;
        }
        if s.mu.is_some() && constants.mu > 0.0 && constants.mu <= constants.lambda {
            constants.assumptions = crate::math::Assumptions::Hold;
        }

        // Placeholder schedule; `reshape` installs the real one.
        let federation = FederationConfig {
            clients: f.clients,
            pool_size: f.pool_size,
            local_iters: f.local_iters,
            global_iters: f.global_iters,
            schedule: Schedule::Constant { eta: s.eta },
            clip,
            mechanism: mechanism_spec(config, config.dp.epsilon)?,
            theta_0,
            seed: f.seed,
        };
        let exp = Experiment {
            config: config.clone(),
            dataset,
            constants,
            federation,
            repeats: f.repeats,
            variance_mode: config.dp.variance_mode,
        };
        exp.reshape(f.local_iters, f.global_iters)
    }

    /// Same experiment with a different `(E, T_g)`; recomputes the schedule
    /// offset and the gradient bound.
    pub fn reshape(&self, local_iters: u64, global_iters: u64) -> Result<Self> {
        let mut exp = self.clone();
        exp.federation.local_iters = local_iters;
        exp.federation.global_iters = global_iters;
        let s = &self.config.schedule;
        exp.federation.schedule = match s.kind {
            ScheduleKind::Constant => Schedule::Constant { eta: s.eta },
            ScheduleKind::Theorem => {
                let c = &exp.constants;
                if !(c.mu > 0.0) || !c.assumptions_hold() {
                    return Err(Error::config(
                        "the theorem schedule needs a positive strong-convexity modulus; \
                         set schedule.mu or use schedule.kind = \"constant\"",
                    ));
                }
                let gamma = s.gamma.unwrap_or_else(|| schedule_offset(c.mu, c.lambda, local_iters));
                Schedule::Theorem { mu: c.mu, gamma }
            }
        };
        exp.federation.validate()?;
        exp.constants.g_bound = match (s.g_bound, self.federation.clip.norm) {
            (Some(g), _) => g,
            (None, NormKind::L2) => self.federation.clip.zeta,
            (None, NormKind::L1) => pilot_gradient_bound(&exp.federation, &exp.dataset.shards)?,
        };
        Ok(exp)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        let mut exp = self.clone();
        exp.federation.mechanism = mechanism_spec(&self.config, epsilon)?;
        exp.federation.validate()?;
        Ok(exp)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut exp = self.clone();
        exp.federation.seed = seed;
        exp
    }

    pub fn shape(&self) -> Shape {
        Shape {
            local_iters: self.federation.local_iters,
            global_iters: self.federation.global_iters,
            clients: self.federation.clients,
            pool_size: self.federation.pool_size,
            dim: self.federation.theta_0.dim(),
        }
    }

    /// Bound parameters, when the assumptions hold and the schedule is the
    /// decaying one the bound is stated for.
    pub fn bound_params(&self) -> Option<BoundParams> {
        if !self.federation.schedule.is_theorem() {
            return None;
        }
        let mut bp = BoundParams::new(&self.constants, &self.federation.mechanism, self.shape()).ok()?;
        if let Schedule::Theorem { gamma, .. } = self.federation.schedule {
            bp.gamma = gamma;
        }
        Some(bp)
    }

    pub fn reference(&self) -> Reference {
        Reference {
            theta_star: Some(self.constants.theta_star.clone()),
            bound: self.bound_params().map(|bp| (bp, self.constants.y0)),
        }
    }

    /// Noise context for round `t`.
    pub fn noise_context(&self, t: u64) -> Result<NoiseContext> {
        let f = &self.federation;
        NoiseContext::new(
            f.theta_0.dim(),
            f.schedule.rate(t * f.local_iters),
            f.local_iters,
            f.global_iters,
            f.pool_size,
            f.clients,
            self.dataset.n,
            self.dataset.n_bar_sq,
        )
    }

    /// Non-fatal caveats about the configuration, for display.
    pub fn warnings(&self) -> Vec<String> {
        self.noise_context(0)
            .ok()
            .and_then(|ctx| composition_warning(&ctx, &self.federation.mechanism))
            .into_iter()
            .collect()
    }

    /// Runs `work` on a pool with `federation.threads` workers.
    pub fn install<T: Send>(&self, work: impl FnOnce() -> T + Send) -> Result<T> {
        with_threads(self.config.federation.threads, work)
    }
}

/// Runs `work` inside a rayon pool of the given size (0 = rayon default).
pub fn with_threads<T: Send>(threads: usize, work: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(work))
}
