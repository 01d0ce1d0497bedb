//! Declarative experiment configuration (TOML) with documented keys.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::edit::AscentOpts;
use crate::model::ModelConfig;

use super::HarnessError;

/// Environment variable that overrides `[output].dir`. Nothing else is read
/// from the environment.
pub const OUT_DIR_ENV: &str = "EDITLAB_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricToggle {
    SAcc,
    TAcc,
    CAcc,
    Kl,
    TopK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Load this checkpoint instead of generating from the seed.
    pub checkpoint: Option<PathBuf>,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let cfg = ModelConfig::default();
        Self {
            checkpoint: None,
            d_model: cfg.d_model,
            n_layers: cfg.n_layers,
            n_heads: cfg.n_heads,
            max_seq: cfg.max_seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditSection {
    /// Edited layers, ascending.
    pub layers: Vec<usize>,
    /// Regularization weights, strictly increasing.
    pub lambda_grid: Vec<f64>,
    pub ascent_steps: usize,
    pub ascent_step_size: f64,
    pub ascent_stop_on_top1: bool,
}

impl Default for EditSection {
    fn default() -> Self {
        let opts = AscentOpts::default();
        Self {
            layers: vec![1, 2, 3],
            lambda_grid: vec![1.5e2, 1.5e3, 1.5e4, 1.5e5, 1.5e6],
            ascent_steps: opts.max_steps,
            ascent_step_size: opts.step_size,
            ascent_stop_on_top1: opts.stop_on_top1,
        }
    }
}

impl EditSection {
    pub fn ascent_opts(&self) -> AscentOpts {
        AscentOpts {
            step_size: self.ascent_step_size,
            max_steps: self.ascent_steps,
            stop_on_top1: self.ascent_stop_on_top1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub topk: Vec<usize>,
    pub enabled: Vec<MetricToggle>,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            topk: vec![1, 5, 10],
            enabled: vec![
                MetricToggle::SAcc,
                MetricToggle::TAcc,
                MetricToggle::CAcc,
                MetricToggle::Kl,
                MetricToggle::TopK,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub csv: String,
    pub json: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), csv: "sweep.csv".into(), json: "sweep.json".into() }
    }
}

/// Full sweep configuration. Defaults reproduce the bundled fixed-seed
/// experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: Option<PathBuf>,
    pub model: ModelSection,
    pub edit: EditSection,
    pub metrics: MetricsSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            dataset: None,
            model: ModelSection::default(),
            edit: EditSection::default(),
            metrics: MetricsSection::default(),
            output: OutputSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        let config: ExperimentConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let grid = &self.edit.lambda_grid;
        if grid.is_empty() {
            return Err(HarnessError::Config("lambda_grid must be non-empty".into()));
        }
        if grid.iter().any(|&l| !(l > 0.0)) {
            return Err(HarnessError::Config("lambda values must be positive".into()));
        }
        if !grid.windows(2).all(|w| w[0] < w[1]) {
            return Err(HarnessError::Config("lambda_grid must be strictly increasing".into()));
        }
        if self.edit.layers.is_empty() || !self.edit.layers.windows(2).all(|w| w[0] < w[1]) {
            return Err(HarnessError::Config("layers must be non-empty and ascending".into()));
        }
        if self.edit.layers.last().copied().unwrap_or(0) >= self.model.n_layers {
            return Err(HarnessError::Config("edited layer outside the model".into()));
        }
        if self.metrics.topk.is_empty() || !self.metrics.topk.windows(2).all(|w| w[0] < w[1]) {
            return Err(HarnessError::Config("topk must be non-empty and ascending".into()));
        }
        if self.metrics.topk.first() == Some(&0) {
            return Err(HarnessError::Config("topk values must be at least 1".into()));
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.model.d_model,
            n_layers: self.model.n_layers,
            n_heads: self.model.n_heads,
            max_seq: self.model.max_seq,
            seed: self.seed,
        }
    }

    /// Output directory after applying the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }
}
