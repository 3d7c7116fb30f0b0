//! Experiment configuration files.
//!
//! ```toml
//! seed = 0
//! horizons = [1]
//!
//! [data]
//! dir = "data/flu"          # or a [data.synthetic] table
//! views = [1, 2]            # optional subset, default view always kept
//!
//! [split]
//! test_len = 48
//!
//! [model]
//! latent_dim = 60
//!
//! [train]
//! epochs = 100
//!
//! [metrics]
//! samples = 1000
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use camul_core::io::read_dataset;
use camul_core::metrics::{DensityMethod, MetricConfig};
use camul_core::preprocessing::{make_synthetic_panel, SyntheticConfig};
use camul_core::{Dataset, ModelConfig, SplitConfig, TrainConfig};

use crate::UserError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Forecast offsets; one model is trained per entry.
    #[serde(default)]
    pub horizons: Vec<usize>,
    /// Output directory, overridden by `--out`.
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub forecast: ForecastSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset directory; relative paths resolve against the config file.
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    /// View ids to keep.
    #[serde(default)]
    pub views: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSection {
    /// Trailing steps of every series held out for evaluation.
    pub test_len: usize,
}

impl Default for SplitSection {
    fn default() -> Self {
        Self { test_len: 48 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSection {
    /// Monte-Carlo draws per forecast.
    pub samples: usize,
    pub is_half_width: f64,
    pub levels: Vec<f64>,
    pub density: DensityMethod,
}

impl Default for MetricsSection {
    fn default() -> Self {
        let m = MetricConfig::default();
        Self {
            samples: camul_core::inference::DEFAULT_SAMPLES,
            is_half_width: m.is_half_width,
            levels: m.levels,
            density: m.density,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    /// Series to forecast; empty means all.
    pub series: Vec<String>,
    /// Central interval levels reported per forecast.
    pub levels: Vec<f64>,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self { series: Vec::new(), levels: vec![0.5, 0.8, 0.9, 0.95] }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| UserError(format!("invalid config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file and resolves `data.dir` against its parent.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UserError(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(dir) = &config.data.dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                config.data.dir = Some(base.join(dir));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.dir, &self.data.synthetic) {
            (Some(_), Some(_)) => bail!(UserError("data: set either `dir` or `synthetic`, not both".into())),
            (None, None) => bail!(UserError("data: one of `dir` or `synthetic` is required".into())),
            _ => {}
        }
        if self.horizons.contains(&0) {
            bail!(UserError("horizons must be positive".into()));
        }
        if self.metrics.samples < 2 {
            bail!(UserError("metrics.samples must be at least 2".into()));
        }
        self.model.validate().map_err(|e| UserError(e.to_string()))?;
        self.train.validate().map_err(|e| UserError(e.to_string()))?;
        Ok(())
    }

    /// Horizons to run, defaulting to the model's own.
    pub fn horizon_list(&self) -> Vec<usize> {
        if self.horizons.is_empty() {
            vec![self.model.horizon]
        } else {
            self.horizons.clone()
        }
    }

    pub fn model_for(&self, horizon: usize) -> ModelConfig {
        ModelConfig { horizon, ..self.model.clone() }
    }

    pub fn split_for(&self, horizon: usize) -> SplitConfig {
        SplitConfig {
            test_len: self.split.test_len,
            window: self.model.window,
            horizon,
            count_per_series: self.train.count_per_series,
            validation_fraction: self.train.validation_fraction,
            reference_policy: self.model.reference_policy,
            seed: self.seed,
        }
    }

    pub fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            is_half_width: self.metrics.is_half_width,
            levels: self.metrics.levels.clone(),
            density: self.metrics.density,
        }
    }

    /// Loads or generates the dataset and applies the view selection.
    pub fn dataset(&self) -> Result<Dataset> {
        let dataset = match (&self.data.dir, &self.data.synthetic) {
            (Some(dir), _) => {
                read_dataset(dir).map_err(|e| UserError(format!("cannot load dataset from {}: {e}", dir.display())))?
            }
            (None, Some(spec)) => make_synthetic_panel(spec).map_err(|e| UserError(e.to_string()))?.dataset,
            (None, None) => bail!(UserError("no data source configured".into())),
        };
        match &self.data.views {
            Some(keep) => Ok(dataset.select_views(keep).map_err(|e| UserError(e.to_string()))?),
            None => Ok(dataset),
        }
    }

    /// Canonical serialization used for hashing.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config is plain data")
    }
}
