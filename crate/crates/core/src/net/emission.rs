//! Shared projection heads mapping `y = [h_{i,t}; e_i]` to `(μ_i, d_i, v_i)`.

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::lowrank::LowRankGaussian;

use super::lstm::sigmoid;
use super::params::NetworkParams;

/// `log(1 + eˣ)`, floored at the smallest positive normal so `d > 0`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    let s = x.max(0.0) + (-x.abs()).exp().ln_1p();
    s.max(f64::MIN_POSITIVE)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mu: f64,
    pub d: f64,
    pub v: Vec<f64>,
}

impl NetworkParams {
    /// `[h; e_i]`.
    pub fn feature_vector(&self, h: &[f64], series_index: usize) -> Vec<f64> {
        let mut y = Vec::with_capacity(self.shape.projection_width());
        y.extend_from_slice(h);
        y.extend_from_slice(self.embeddings.row(series_index));
        y
    }

    pub(crate) fn project_features(&self, y: &[f64]) -> Projection {
        Projection {
            mu: dot(&self.w_mu, y),
            d: softplus(dot(&self.w_d, y)),
            v: self.w_v.iter_rows().map(|row| dot(row, y)).collect(),
        }
    }

    /// Pre-softplus diagonal activation `w_dᵀy` and its softplus derivative.
    pub(crate) fn diag_activation(&self, y: &[f64]) -> (f64, f64) {
        let a = dot(&self.w_d, y);
        (a, sigmoid(a))
    }
}

/// Emission parameters of series `series_index` from its top hidden state.
pub fn project(params: &NetworkParams, h: &[f64], series_index: usize) -> Result<Projection> {
    if series_index >= params.shape.num_series {
        return Err(Error::InvalidArgument(format!(
            "series index {series_index} out of range for {} series",
            params.shape.num_series
        )));
    }
    if h.len() != params.shape.hidden {
        return Err(Error::Dimension {
            expected: params.shape.hidden,
            got: h.len(),
        });
    }
    Ok(params.project_features(&params.feature_vector(h, series_index)))
}

/// GP kernel `k(y, y′) = 1[y = y′]·d̃(y) + ṽ(y)ᵀṽ(y′)`.
pub fn kernel_eval(params: &NetworkParams, y: &[f64], y2: &[f64]) -> f64 {
    let v1: Vec<f64> = params.w_v.iter_rows().map(|row| dot(row, y)).collect();
    let v2: Vec<f64> = params.w_v.iter_rows().map(|row| dot(row, y2)).collect();
    let shared = dot(&v1, &v2);
    if y == y2 {
        softplus(dot(&params.w_d, y)) + shared
    } else {
        shared
    }
}

/// Joint emission over a set of series from their top hidden states.
pub fn assemble(params: &NetworkParams, tops: &[&[f64]], series_indices: &[usize]) -> Result<LowRankGaussian> {
    let n = series_indices.len();
    let r = params.shape.rank;
    let mut mu = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    let mut v = Matrix::zeros(n, r);
    for (b, (&h, &idx)) in tops.iter().zip(series_indices).enumerate() {
        let p = project(params, h, idx)?;
        mu.push(p.mu);
        d.push(p.d);
        v.row_mut(b).copy_from_slice(&p.v);
    }
    LowRankGaussian::new(mu, d, v)
}
