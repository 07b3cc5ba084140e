//! Self-describing JSON checkpoint: every tensor by name and shape, the
//! fitted marginal transforms, and the input layout.
//!
//! ```text
//! {
//!   "format": "gpcopula-checkpoint", "version": 1,
//!   "shape": {...}, "dropout_rate": 0.01,
//!   "tensors": [{"name": "lstm.0.w_ih", "shape": [160, 4], "data": [...]}, ...],
//!   "transforms": [{"kind": "ecdf", ...}, ...],
//!   "features": {...}, "frequency": "hourly", "scale_features": true,
//!   "context_length": 24, "horizon": 24, "series_ids": [...],
//!   "train_config": {...}
//! }
//! ```
//!
//! Tensor data is row-major. Floats are written in shortest round-trip form,
//! so a save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::copula::MarginalTransform;
use crate::data::{write_atomic, Frequency};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::net::{FeatureSpec, ModelShape, NetworkParams};
use crate::training::TrainConfig;

pub const FORMAT: &str = "gpcopula-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: ModelShape,
    pub dropout_rate: f64,
    pub tensors: Vec<StoredTensor>,
    pub transforms: Vec<MarginalTransform>,
    pub features: FeatureSpec,
    pub frequency: Frequency,
    pub scale_features: bool,
    pub context_length: usize,
    pub horizon: usize,
    pub series_ids: Vec<String>,
    #[serde(default)]
    pub train_config: Option<TrainConfig>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, train_config: Option<&TrainConfig>) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            shape: model.params.shape,
            dropout_rate: model.params.dropout_rate,
            tensors: model
                .params
                .tensors()
                .into_iter()
                .map(|t| StoredTensor {
                    name: t.name,
                    shape: t.shape,
                    data: t.data.to_vec(),
                })
                .collect(),
            transforms: model.transforms.clone(),
            features: model.features.clone(),
            frequency: model.frequency,
            scale_features: model.scale_features,
            context_length: model.context_length,
            horizon: model.horizon,
            series_ids: model.series_ids.clone(),
            train_config: train_config.cloned(),
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format != FORMAT || self.version != VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                self.format, self.version
            )));
        }
        let n = self.shape.num_series;
        if self.transforms.len() != n || self.series_ids.len() != n {
            return Err(Error::Data(format!(
                "checkpoint has {} transforms and {} series ids for {n} series",
                self.transforms.len(),
                self.series_ids.len()
            )));
        }
        if self.features.input_width() != self.shape.input_width {
            return Err(Error::Data(format!(
                "checkpoint feature layout has width {} but the network expects {}",
                self.features.input_width(),
                self.shape.input_width
            )));
        }
        let tensors: Vec<(String, Vec<usize>, Vec<f64>)> =
            self.tensors.into_iter().map(|t| (t.name, t.shape, t.data)).collect();
        let params = NetworkParams::from_tensors(self.shape, self.dropout_rate, &tensors)?;
        Ok(Model {
            params,
            transforms: self.transforms,
            features: self.features,
            frequency: self.frequency,
            scale_features: self.scale_features,
            context_length: self.context_length,
            horizon: self.horizon,
            series_ids: self.series_ids,
        })
    }
}

pub fn save(model: &Model, train_config: Option<&TrainConfig>, path: &Path) -> Result<()> {
    let ck = Checkpoint::from_model(model, train_config);
    write_atomic(path, |w| Ok(serde_json::to_writer(w, &ck)?))
}

pub fn load(path: &Path) -> Result<(Model, Option<TrainConfig>)> {
    let file = std::fs::File::open(path)?;
    let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
    let cfg = ck.train_config.clone();
    Ok((ck.into_model()?, cfg))
}
