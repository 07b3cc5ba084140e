//! JSON run configuration for the command line. Unknown keys are rejected
//! at every level; every key has a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Frequency;
use crate::error::{Error, Result};
use crate::metrics::CrpsLevels;
use crate::synthetic::SyntheticSpec;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub synthetic: SyntheticSpec,
    #[serde(default)]
    pub data: DataOptions,
    #[serde(default)]
    pub forecast: ForecastOptions,
    #[serde(default)]
    pub metrics: MetricOptions,
    #[serde(default)]
    pub gradcheck: GradcheckOptions,
    #[serde(default)]
    pub paths: Paths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataOptions {
    #[serde(default = "default_frequency")]
    pub frequency: Frequency,
}

fn default_frequency() -> Frequency {
    Frequency::Hourly
}

impl Default for DataOptions {
    fn default() -> Self {
        DataOptions {
            frequency: default_frequency(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastOptions {
    /// Number of rolling evaluation windows at the end of the panel.
    #[serde(default = "default_windows")]
    pub windows: usize,
    /// Steps between window origins; defaults to the horizon.
    #[serde(default)]
    pub stride: Option<usize>,
    /// Also write the one-step predicted mean and covariance from the first
    /// origin to the panel end.
    #[serde(default)]
    pub covariance_trace: bool,
    #[serde(default = "default_true")]
    pub quantiles: bool,
}

fn default_windows() -> usize {
    1
}

fn default_true() -> bool {
    true
}

impl Default for ForecastOptions {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MetricOptions {
    #[serde(default)]
    pub levels: CrpsLevels,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckOptions {
    #[serde(default = "default_fd_step")]
    pub step: f64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_fd_step() -> f64 {
    1e-5
}

fn default_tolerance() -> f64 {
    1e-4
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// File names inside the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    #[serde(default = "default_panel")]
    pub panel: String,
    #[serde(default = "default_truth")]
    pub truth: String,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: String,
    #[serde(default = "default_loss_trace")]
    pub loss_trace: String,
    #[serde(default = "default_manifest")]
    pub manifest: String,
    #[serde(default = "default_metrics")]
    pub metrics: String,
}

fn default_panel() -> String {
    "panel.csv".into()
}
fn default_truth() -> String {
    "truth.csv".into()
}
fn default_checkpoint() -> String {
    "checkpoint.json".into()
}
fn default_loss_trace() -> String {
    "loss_trace.csv".into()
}
fn default_manifest() -> String {
    "forecast.json".into()
}
fn default_metrics() -> String {
    "metrics.json".into()
}

impl Default for Paths {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.synthetic.validate()?;
        if self.forecast.windows == 0 {
            return Err(Error::Config("forecast.windows must be positive".into()));
        }
        if !(self.gradcheck.step > 0.0 && self.gradcheck.tolerance > 0.0) {
            return Err(Error::Config("gradcheck step and tolerance must be positive".into()));
        }
        Ok(())
    }
}
