//! Experiment configurations, read from plain `key = value` files (TOML).
//! Keys left out take the defaults below; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wloss::LossKind;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Optimizer settings shared by the experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdSettings {
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub l2: f64,
    pub minibatch: usize,
}

impl SgdSettings {
    pub fn train_config(&self, seed: u64) -> wloss::TrainConfig {
        wloss::TrainConfig {
            minibatch: self.minibatch,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            l2: self.l2,
            seed,
            ..wloss::TrainConfig::default()
        }
    }
}

impl Default for SgdSettings {
    fn default() -> Self {
        Self { iterations: 2000, learning_rate: 0.1, momentum: 0.7, l2: 0.0005, minibatch: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatticeExperimentConfig {
    pub grid_sizes: Vec<usize>,
    pub noise_levels: Vec<f64>,
    pub repeats: usize,
    pub samples_per_class: usize,
    pub test_samples_per_class: usize,
    pub gaussian_stdev: f64,
    pub seed: u64,
    /// Transport loss compared against the KL baseline.
    pub loss: LossKind,
    /// Entropic strength when `loss` is `sinkhorn` or `relaxed`.
    pub lambda: f64,
    pub sinkhorn_iters: usize,
    pub sgd: SgdSettings,
}

impl Default for LatticeExperimentConfig {
    fn default() -> Self {
        Self {
            grid_sizes: (3..=7).collect(),
            noise_levels: (1..=9).map(|i| i as f64 / 10.0).collect(),
            repeats: 10,
            samples_per_class: 100,
            test_samples_per_class: 100,
            gaussian_stdev: 0.3,
            seed: 0,
            loss: LossKind::SinkhornW,
            lambda: 3.0,
            sinkhorn_iters: 10,
            sgd: SgdSettings { learning_rate: 0.3, ..SgdSettings::default() },
        }
    }
}

impl LatticeExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.grid_sizes.is_empty() || self.grid_sizes.iter().any(|&d| d < 2) {
            return Err(ConfigError::Invalid("grid sizes must be nonempty and at least 2".into()));
        }
        if self.noise_levels.is_empty() || self.noise_levels.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(ConfigError::Invalid("noise levels must be nonempty and lie in [0, 1]".into()));
        }
        if self.repeats == 0 || self.samples_per_class == 0 || self.test_samples_per_class == 0 {
            return Err(ConfigError::Invalid("repeats and sample counts must be positive".into()));
        }
        if !(self.gaussian_stdev >= 0.0) {
            return Err(ConfigError::Invalid("gaussian_stdev must be nonnegative".into()));
        }
        if self.loss == LossKind::KlOnly {
            return Err(ConfigError::Invalid("loss must be a transport loss; KL is the baseline".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MnistExperimentConfig {
    pub p_values: Vec<f64>,
    /// Training images drawn from the training split.
    pub subset_size: usize,
    /// Test images drawn from the test split.
    pub test_size: usize,
    pub lambda: f64,
    /// Sinkhorn iterations per loss evaluation.
    pub iters: usize,
    pub seed: u64,
    pub sgd: SgdSettings,
}

impl Default for MnistExperimentConfig {
    fn default() -> Self {
        Self {
            p_values: vec![0.1, 1.0, 4.0],
            subset_size: 5000,
            test_size: 1000,
            lambda: 50.0,
            iters: 10,
            seed: 0,
            sgd: SgdSettings { iterations: 3000, learning_rate: 0.05, ..SgdSettings::default() },
        }
    }
}

impl MnistExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.p_values.is_empty() || self.p_values.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(ConfigError::Invalid("p values must be nonempty, finite and nonnegative".into()));
        }
        if self.subset_size == 0 || self.test_size == 0 || self.iters == 0 {
            return Err(ConfigError::Invalid("subset sizes and iters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TagExperimentConfig {
    pub num_tags: usize,
    pub feature_dim: usize,
    pub train_size: usize,
    pub test_size: usize,
    /// Side of the square the tags are scattered in.
    pub extent: f64,
    /// Tags within this distance of an image's topic tag may co-occur.
    pub tag_radius: f64,
    pub feature_noise: f64,
    pub redundancy_threshold: f64,
    pub alpha_kl: f64,
    pub lambda: f64,
    pub top_k: Vec<usize>,
    pub seed: u64,
    pub sgd: SgdSettings,
}

impl Default for TagExperimentConfig {
    fn default() -> Self {
        Self {
            num_tags: 30,
            feature_dim: 20,
            train_size: 2000,
            test_size: 500,
            extent: 6.0,
            tag_radius: 1.5,
            feature_noise: 0.5,
            redundancy_threshold: 1.3,
            alpha_kl: 0.5,
            lambda: 50.0,
            top_k: vec![1, 2, 3, 4, 5],
            seed: 0,
            sgd: SgdSettings { iterations: 1500, ..SgdSettings::default() },
        }
    }
}

impl TagExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.num_tags < 2 || self.feature_dim == 0 || self.train_size == 0 || self.test_size == 0 {
            return Err(ConfigError::Invalid("need at least 2 tags and positive sizes".into()));
        }
        if self.top_k.is_empty() || self.top_k.contains(&0) {
            return Err(ConfigError::Invalid("top_k values must be positive".into()));
        }
        Ok(())
    }
}

/// Parses a config from text.
pub fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, ConfigError> {
    Ok(toml::from_str(text)?)
}

/// Reads a config file, returning it with its raw text (for hashing).
pub fn load<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<(T, String), ConfigError> {
    let text = std::fs::read_to_string(path)?;
    Ok((parse(&text)?, text))
}
