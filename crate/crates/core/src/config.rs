//! Run configuration: TOML schema, named environment presets, and
//! validation with key-qualified error messages.

use crate::environment::EnvironmentModel;
use crate::error::{Error, Result};
use crate::presets;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub workers: usize,
    pub strict: bool,
    pub environment: EnvironmentConfig,
    pub correctors: CorrectorConfig,
    pub simulate: SimulateConfig,
    pub clt: CltConfig,
    pub spde: SpdeConfig,
    pub verify: VerifyConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            workers: 0,
            strict: false,
            environment: EnvironmentConfig::default(),
            correctors: CorrectorConfig::default(),
            simulate: SimulateConfig::default(),
            clt: CltConfig::default(),
            spde: SpdeConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConfig {
    /// One of: constant, symmetric-default, nonsymmetric-default,
    /// toy-two-state, frozen-nonsymmetric.
    pub preset: String,
    pub n_torus: usize,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig { preset: "symmetric-default".into(), n_torus: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrectorConfig {
    pub s_prod: f64,
    pub stream: u64,
}

impl Default for CorrectorConfig {
    fn default() -> Self {
        CorrectorConfig { s_prod: 2000.0, stream: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub epsilons: Vec<f64>,
    pub t_horizon: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig { epsilons: vec![0.2, 0.1, 0.05], t_horizon: 0.5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CltConfig {
    pub epsilon: f64,
    pub t_horizon: f64,
    pub n_paths: usize,
}

impl Default for CltConfig {
    fn default() -> Self {
        CltConfig { epsilon: 0.05, t_horizon: 1.0, n_paths: 200 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpdeConfig {
    pub n_steps: usize,
    pub n_paths: usize,
    pub t_horizon: f64,
}

impl Default for SpdeConfig {
    fn default() -> Self {
        SpdeConfig { n_steps: 200, n_paths: 1000, t_horizon: 0.5 }
    }
}

/// Projection family for distribution tests: Gaussian bumps exp(-(x-c)²/2w²).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub bump_centers: Vec<f64>,
    pub bump_widths: Vec<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig { bump_centers: vec![-1.0, 0.0, 1.0], bump_widths: vec![0.7, 1.0, 0.7] }
    }
}

pub const PRESET_NAMES: [&str; 5] = [
    "constant",
    "symmetric-default",
    "nonsymmetric-default",
    "toy-two-state",
    "frozen-nonsymmetric",
];

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text)
            .map_err(|e| Error::Format(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if !PRESET_NAMES.contains(&self.environment.preset.as_str()) {
            return Err(Error::Config(format!(
                "environment.preset: unknown preset '{}' (expected one of {:?})",
                self.environment.preset, PRESET_NAMES
            )));
        }
        if self.environment.n_torus < 4 {
            return Err(Error::Config("environment.n_torus: must be at least 4".into()));
        }
        if !(self.correctors.s_prod > 0.0) {
            return Err(Error::Config("correctors.s_prod: must be positive".into()));
        }
        if self.simulate.epsilons.is_empty()
            || self.simulate.epsilons.iter().any(|e| !(*e > 0.0 && *e < 1.0))
        {
            return Err(Error::Config(
                "simulate.epsilons: need a nonempty list of values in (0, 1)".into(),
            ));
        }
        if !(self.simulate.t_horizon > 0.0) {
            return Err(Error::Config("simulate.t_horizon: must be positive".into()));
        }
        if !(self.clt.epsilon > 0.0 && self.clt.epsilon < 1.0) {
            return Err(Error::Config("clt.epsilon: must lie in (0, 1)".into()));
        }
        if self.clt.n_paths < 100 {
            return Err(Error::Config("clt.n_paths: need at least 100 paths".into()));
        }
        if self.spde.n_steps < 200 {
            return Err(Error::Config("spde.n_steps: need at least 200 steps".into()));
        }
        if self.verify.bump_centers.len() != self.verify.bump_widths.len()
            || self.verify.bump_centers.is_empty()
        {
            return Err(Error::Config(
                "verify.bump_centers/bump_widths: need matching nonempty lists".into(),
            ));
        }
        if self.verify.bump_widths.iter().any(|w| !(*w > 0.0)) {
            return Err(Error::Config("verify.bump_widths: widths must be positive".into()));
        }
        Ok(())
    }

    pub fn build_environment(&self) -> Result<EnvironmentModel> {
        let n = self.environment.n_torus;
        match self.environment.preset.as_str() {
            "constant" => presets::constant(n),
            "symmetric-default" => presets::symmetric_default(n),
            "nonsymmetric-default" => presets::nonsymmetric_default(n),
            "toy-two-state" => presets::toy_two_state(n),
            "frozen-nonsymmetric" => presets::frozen_nonsymmetric(n),
            other => Err(Error::Config(format!("environment.preset: unknown preset '{other}'"))),
        }
    }
}

/// Hex SHA-256 of the canonical TOML serialization; identifies a run.
pub fn config_hash(cfg: &Config) -> String {
    let mut hasher = Sha256::new();
    hasher.update(cfg.to_toml_string().as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
