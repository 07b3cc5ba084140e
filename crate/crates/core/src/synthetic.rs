//! Artificial panel with a time-varying rank-2 covariance:
//! `z_t ~ N(ρ_t u, U S_t Uᵀ)`, `ρ_t = sin(t·Δt)`,
//! `S_t = [[σ₁², ρ_t σ₁σ₂], [ρ_t σ₁σ₂, σ₂²]]`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, Frequency, TimeSeriesPanel, Timestamps};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

fn default_num_series() -> usize {
    4
}
fn default_length() -> usize {
    24_000
}
fn default_sigma() -> f64 {
    0.1
}
fn default_a() -> f64 {
    -0.5
}
fn default_b() -> f64 {
    0.5
}
fn default_dt() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(default = "default_num_series")]
    pub num_series: usize,
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default = "default_sigma")]
    pub sigma1: f64,
    #[serde(default = "default_sigma")]
    pub sigma2: f64,
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    /// Time advanced per step inside `sin`.
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_series == 0 || self.length == 0 {
            return Err(Error::Config("synthetic num_series and length must be positive".into()));
        }
        if !(self.b > self.a) {
            return Err(Error::Config(format!("synthetic bounds need b > a, got a={}, b={}", self.a, self.b)));
        }
        if !(self.sigma1 > 0.0 && self.sigma2 > 0.0) {
            return Err(Error::Config("synthetic sigma1 and sigma2 must be positive".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("synthetic dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn rho(&self, t: usize) -> f64 {
        (t as f64 * self.dt).sin()
    }

    /// `S_t`, row-major 2×2.
    pub fn factor_cov(&self, t: usize) -> [[f64; 2]; 2] {
        let off = self.rho(t) * self.sigma1 * self.sigma2;
        [[self.sigma1 * self.sigma1, off], [off, self.sigma2 * self.sigma2]]
    }
}

/// The random loadings behind a synthetic panel.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTruth {
    pub spec: SyntheticSpec,
    /// Mean direction `u`, length N.
    pub u: Vec<f64>,
    /// Loadings `U`, N×2.
    pub loadings: Matrix,
}

impl SyntheticTruth {
    /// Draws `u` and `U` with entries uniform in `[a, b)`.
    pub fn draw<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let n = spec.num_series;
        let u = (0..n).map(|_| rng.random_range(spec.a..spec.b)).collect();
        let loadings = Matrix::from_fn(n, 2, |_, _| rng.random_range(spec.a..spec.b));
        Ok(SyntheticTruth {
            spec: spec.clone(),
            u,
            loadings,
        })
    }

    /// Exact `(μ_t, Σ_t)`.
    pub fn true_cov(&self, t: usize) -> (Vec<f64>, Matrix) {
        let rho = self.spec.rho(t);
        let s = self.spec.factor_cov(t);
        let n = self.u.len();
        let mean = self.u.iter().map(|x| rho * x).collect();
        let l = &self.loadings;
        // Symmetric in (a, b) term by term, so Σ_t = Σ_tᵀ exactly.
        let cov = Matrix::from_fn(n, n, |a, b| {
            s[0][0] * (l[(a, 0)] * l[(b, 0)])
                + s[1][1] * (l[(a, 1)] * l[(b, 1)])
                + s[0][1] * (l[(a, 0)] * l[(b, 1)] + l[(a, 1)] * l[(b, 0)])
        });
        (mean, cov)
    }

    /// One draw of `z_t`. The 2×2 factor uses its closed-form Cholesky,
    /// which stays real at `ρ_t = ±1`.
    pub fn sample_at<R: Rng + ?Sized>(&self, t: usize, rng: &mut R) -> Vec<f64> {
        let rho = self.spec.rho(t);
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        let w1 = self.spec.sigma1 * e1;
        let w2 = self.spec.sigma2 * (rho * e1 + (1.0 - rho * rho).max(0.0).sqrt() * e2);
        (0..self.u.len())
            .map(|i| rho * self.u[i] + self.loadings[(i, 0)] * w1 + self.loadings[(i, 1)] * w2)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub panel: TimeSeriesPanel,
    pub truth: SyntheticTruth,
}

/// Draws the loadings and a panel of `spec.length` steps, all from `spec.seed`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let truth = SyntheticTruth::draw(spec, &mut rng)?;
    let n = spec.num_series;
    let mut values = Matrix::zeros(n, spec.length);
    for t in 0..spec.length {
        for (i, z) in truth.sample_at(t, &mut rng).into_iter().enumerate() {
            values[(i, t)] = z;
        }
    }
    let panel = TimeSeriesPanel::new(
        values,
        (0..n).map(|i| format!("z{i}")).collect(),
        Timestamps::Index((0..spec.length as i64).collect()),
        Frequency::Hourly,
    )?;
    Ok(SyntheticData { panel, truth })
}

/// Columns: `t`, `mu_<id>` per series, then `cov_<a>_<b>` for `b ≤ a`; one
/// row per step.
pub fn write_truth_to<W: Write>(truth: &SyntheticTruth, series_ids: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let n = series_ids.len();
    let mut header = vec!["t".to_string()];
    header.extend(series_ids.iter().map(|id| format!("mu_{id}")));
    for a in 0..n {
        for b in 0..=a {
            header.push(format!("cov_{}_{}", series_ids[a], series_ids[b]));
        }
    }
    w.write_record(&header)?;
    for t in 0..truth.spec.length {
        let (mean, cov) = truth.true_cov(t);
        let mut rec = vec![t.to_string()];
        rec.extend(mean.iter().map(f64::to_string));
        for a in 0..n {
            for b in 0..=a {
                rec.push(cov[(a, b)].to_string());
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_truth(truth: &SyntheticTruth, series_ids: &[String], path: &Path) -> Result<()> {
    write_atomic(path, |w| write_truth_to(truth, series_ids, w))
}
