use serde::{Deserialize, Serialize};

use crate::copula::MarginalTransform;
use crate::data::{build_covariates, Frequency, TimeSeriesPanel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::net::{FeatureSpec, NetworkParams};

/// Everything needed to condition and forecast: network weights, the frozen
/// marginal transforms, and the input layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: NetworkParams,
    pub transforms: Vec<MarginalTransform>,
    pub features: FeatureSpec,
    pub frequency: Frequency,
    pub scale_features: bool,
    pub context_length: usize,
    pub horizon: usize,
    pub series_ids: Vec<String>,
}

impl Model {
    pub fn num_series(&self) -> usize {
        self.transforms.len()
    }

    /// Transformed values and covariates of a panel in this model's layout.
    pub fn prepare(&self, panel: &TimeSeriesPanel) -> Result<PreparedPanel> {
        PreparedPanel::new(panel, &self.transforms, &self.features, self.scale_features)
    }
}

/// A panel mapped to the Gaussian scale, with covariates per step.
#[derive(Debug, Clone)]
pub struct PreparedPanel {
    pub observed: Matrix,
    pub transformed: Matrix,
    pub covariates: Vec<Vec<f64>>,
    pub features: FeatureSpec,
}

impl PreparedPanel {
    pub fn new(
        panel: &TimeSeriesPanel,
        transforms: &[MarginalTransform],
        features: &FeatureSpec,
        scale_features: bool,
    ) -> Result<Self> {
        if transforms.len() != panel.num_series() {
            return Err(Error::Data(format!(
                "model covers {} series but the panel has {}",
                transforms.len(),
                panel.num_series()
            )));
        }
        let covariates = build_covariates(panel.timestamps(), panel.frequency(), scale_features);
        if covariates.first().map_or(0, Vec::len) != features.covariate_width {
            return Err(Error::Data(format!(
                "panel yields {} covariates per step, model expects {}",
                covariates.first().map_or(0, Vec::len),
                features.covariate_width
            )));
        }
        let transformed = Matrix::from_fn(panel.num_series(), panel.len(), |i, t| {
            transforms[i].forward(panel.values()[(i, t)])
        });
        Ok(PreparedPanel {
            observed: panel.values().clone(),
            transformed,
            covariates,
            features: features.clone(),
        })
    }

    pub fn num_series(&self) -> usize {
        self.transformed.rows()
    }

    pub fn len(&self) -> usize {
        self.transformed.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Network input of series `i` at absolute step `t`, reading lagged
    /// values from the panel (zero before its start).
    pub fn input(&self, i: usize, t: usize, out: &mut Vec<f64>) {
        let row = self.transformed.row(i);
        self.features.fill(
            out,
            |k| if t >= k { row[t - k] } else { 0.0 },
            &self.covariates[t],
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// Truncated empirical-CDF copula transform.
    #[default]
    Ecdf,
    /// Per-series standardization by mean and standard deviation.
    Standardize,
    Identity,
}
