//! TOML experiment description. Every key has a default; unknown keys are
//! rejected so that typos fail loudly.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::math::NormKind;
use crate::mechanism::{MechanismKind, VarianceMode};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub federation: FederationSection,
    pub schedule: ScheduleSection,
    pub dp: DpSection,
    pub data: DataSection,
    pub output: OutputSection,
    pub sweep: Option<SweepSection>,
}

/// Initial parameters: one value broadcast to every coordinate, or a full vector.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum InitialParams {
    Fill(f64),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSection {
    pub clients: usize,
    pub pool_size: usize,
    pub local_iters: u64,
    pub global_iters: u64,
    pub clip_threshold: f64,
    pub clip_norm: NormKind,
    pub seed: u64,
    pub repeats: usize,
    pub theta_0: InitialParams,
    /// Worker threads; 0 lets rayon decide.
    pub threads: usize,
}

impl Default for FederationSection {
    fn default() -> Self {
        FederationSection {
            clients: 20,
            pool_size: 5,
            local_iters: 5,
            global_iters: 200,
            clip_threshold: 150.0,
            clip_norm: NormKind::L2,
            seed: 1,
            repeats: 20,
            theta_0: InitialParams::Fill(0.0),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Theorem,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: ScheduleKind,
    /// Rate for the constant schedule.
    pub eta: f64,
    /// Overrides for the measured problem constants.
    pub mu: Option<f64>,
    pub lambda: Option<f64>,
    pub gamma_noniid: Option<f64>,
    pub g_bound: Option<f64>,
    /// Overrides `max(8λ/μ, E)`.
    pub gamma: Option<f64>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            kind: ScheduleKind::Theorem,
            eta: 0.01,
            mu: None,
            lambda: None,
            gamma_noniid: None,
            g_bound: None,
            gamma: None,
        }
    }
}

/// How the per-step sensitivities default from the clipping threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitivityRule {
    /// `ξ1 = ξ2 = ζ`
    Clip,
    /// `ξ1 = 2ζ` (two clipped gradients may point in opposite directions), `ξ2 = ζ`.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpSection {
    pub mechanism: MechanismKind,
    /// `inf` disables noise whatever the mechanism.
    pub epsilon: f64,
    pub delta: f64,
    pub c2: f64,
    pub q: f64,
    pub xi1: Option<f64>,
    pub xi2: Option<f64>,
    pub sensitivity: SensitivityRule,
    pub variance_mode: VarianceMode,
}

impl Default for DpSection {
    fn default() -> Self {
        DpSection {
            mechanism: MechanismKind::None,
            epsilon: 1.0,
            delta: 1e-4,
            c2: 1.0,
            q: 1.0,
            xi1: None,
            xi2: None,
            sensitivity: SensitivityRule::Clip,
            variance_mode: VarianceMode::Exact,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    pub seed: u64,
    pub bias: bool,
    // synthetic
    pub per_client: usize,
    pub features: usize,
    pub heterogeneity: f64,
    pub noise_std: f64,
    // csv
    pub path: Option<PathBuf>,
    pub target: String,
    pub feature_columns: Vec<String>,
    pub train_fraction: f64,
    /// `"target"`, a feature column name, or `"none"` to keep shuffled order.
    pub sort_by: String,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Synthetic,
            seed: 0,
            bias: true,
            per_client: 50,
            features: 4,
            heterogeneity: 0.5,
            noise_std: 0.1,
            path: None,
            target: "target".into(),
            feature_columns: Vec::new(),
            train_fraction: 0.8,
            sort_by: "target".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum SweepAxis {
    T,
    E,
    #[serde(rename = "epsilon")]
    Epsilon,
    #[serde(rename = "E_rule")]
    ERule,
}

impl std::fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepAxis::T => "T",
            SweepAxis::E => "E",
            SweepAxis::Epsilon => "epsilon",
            SweepAxis::ERule => "E_rule",
        })
    }
}

/// A grid value: a number, or a symbolic rule such as `"T^2/3"`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Rule(String),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Number(v) => write!(f, "{v}"),
            SweepValue::Rule(r) => f.write_str(r),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    /// Total iterations `T` for the `E` and `E_rule` axes; defaults to
    /// `local_iters · global_iters`.
    pub total_iters: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        // Relative CSV paths are resolved against the config file.
        if let (Some(data), Some(dir)) = (config.data.path.as_mut(), path.parent()) {
            if data.is_relative() {
                *data = dir.join(&*data);
            }
        }
        Ok(config)
    }

    /// Field-level checks that do not need the dataset.
    pub fn check(&self) -> Result<()> {
        let f = &self.federation;
        if f.repeats == 0 {
            return Err(Error::config("federation.repeats must be ≥ 1"));
        }
        if !(f.clip_threshold > 0.0) {
            return Err(Error::config(format!(
                "federation.clip_threshold must be > 0, got {}",
                f.clip_threshold
            )));
        }
        if self.dp.q != 1.0 {
            return Err(Error::config(format!(
                "dp.q = {} is unsupported: clients always use their full batch (q = 1)",
                self.dp.q
            )));
        }
        if !(self.dp.epsilon > 0.0) {
            return Err(Error::config(format!("dp.epsilon must be > 0, got {}", self.dp.epsilon)));
        }
        if self.data.source == DataSource::Csv && self.data.path.is_none() {
            return Err(Error::config("data.path is required when data.source = \"csv\""));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::config("sweep.values must not be empty"));
            }
        }
        Ok(())
    }
}
