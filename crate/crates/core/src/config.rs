//! Single TOML configuration covering every tunable default.

use crate::diffusion::DiffusionConfig;
use crate::experiments::{AblationConfig, EvalConfig};
use crate::expert::DataConfig;
use crate::planner::PlannerConfig;
use crate::world::NoiseParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Ablation-only knobs; the shared sections come from [`Config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationSection {
    pub repr_noise: NoiseParams,
    pub vtoken_seeds: Vec<u64>,
    pub fractions: Vec<f64>,
}

impl Default for AblationSection {
    fn default() -> Self {
        let d = AblationConfig::default();
        Self { repr_noise: d.repr_noise, vtoken_seeds: d.vtoken_seeds, fractions: d.fractions }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    /// Master seed. Data and training use it directly; benchmark suites use
    /// `seed + 1000`.
    pub seed: u64,
    pub data: DataConfig,
    pub diffusion: DiffusionConfig,
    pub planner: PlannerConfig,
    pub eval: EvalConfig,
    pub ablation: AblationSection,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Write the resolved configuration to `dir/config.resolved.toml`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join("config.resolved.toml");
        std::fs::create_dir_all(dir).map_err(|source| ConfigError::Io { path: dir.into(), source })?;
        std::fs::write(&path, self.to_toml_string()?).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
        Ok(path)
    }

    /// Set the master seed and propagate it to every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.data.seed = seed;
        self.diffusion.seed = seed;
        self.eval.seed = seed.wrapping_add(1000);
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        self.planner.critic.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.data.episodes == 0 || self.data.samples_per_episode == 0 {
            return bad("data.episodes and data.samples_per_episode must be positive");
        }
        if !(0.0..=0.4).contains(&self.data.world.density) {
            return bad("data.world.density must lie in [0, 0.4]");
        }
        if self.diffusion.steps < 2 {
            return bad("diffusion.steps must be at least 2");
        }
        if self.planner.start_step == 0 || self.planner.start_step > self.diffusion.steps {
            return bad("planner.start_step must lie in 1..=diffusion.steps");
        }
        if self.planner.k == 0 {
            return bad("planner.k must be positive");
        }
        if self.planner.execute_length <= 0.0 || self.planner.goal_radius <= 0.0 {
            return bad("planner.execute_length and planner.goal_radius must be positive");
        }
        if self.data.sensor.beams == 0 {
            return bad("data.sensor.beams must be positive");
        }
        if self.planner.sensor != self.data.sensor {
            return bad("planner.sensor must match data.sensor (the policy input layout depends on it)");
        }
        if self.ablation.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return bad("ablation.fractions must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn ablation_config(&self) -> AblationConfig {
        AblationConfig {
            data: self.data.clone(),
            diffusion: self.diffusion.clone(),
            planner: self.planner.clone(),
            eval: self.eval.clone(),
            repr_noise: self.ablation.repr_noise,
            vtoken_seeds: self.ablation.vtoken_seeds.clone(),
            fractions: self.ablation.fractions.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_roundtrip_is_lossless() {
        let c = Config::default().with_seed(7);
        let text = c.to_toml_string().unwrap();
        assert_eq!(Config::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c = Config::from_toml_str("seed = 3\n[planner]\nk = 8\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.planner.k, 8);
        assert_eq!(c.planner.start_step, PlannerConfig::default().start_step);
        assert_eq!(c.diffusion, DiffusionConfig::default());
    }

    #[test]
    fn validation_catches_bad_values() {
        assert!(Config::default().validate().is_ok());
        let mut c = Config::default();
        c.planner.start_step = 11;
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.data.world.density = 0.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected_by_type() {
        assert!(Config::from_toml_str("[planner]\nk = \"many\"\n").is_err());
    }
}
