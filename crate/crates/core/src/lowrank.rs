//! Multivariate normal with low-rank-plus-diagonal covariance `Σ = D + VVᵀ`.
//!
//! All quantities are evaluated through the r×r capacitance matrix
//! `C = I_r + VᵀD⁻¹V`: the matrix determinant lemma gives
//! `log|Σ| = log|C| + log|D|` and the Woodbury identity gives
//! `xᵀΣ⁻¹x = xᵀD⁻¹x − ‖L_C⁻¹ VᵀD⁻¹x‖²`, so a density costs `O(Nr² + r³)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Emission parameters `(μ, diag D, V)` of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankGaussian {
    mu: Vec<f64>,
    d: Vec<f64>,
    v: Matrix,
}

/// Cholesky factor of the capacitance matrix `C = I_r + VᵀD⁻¹V`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacitanceFactor {
    /// Lower triangular, row-major r×r.
    l_c: Vec<f64>,
    rank: usize,
    log_det_c: f64,
}

impl CapacitanceFactor {
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn l_c(&self) -> &[f64] {
        &self.l_c
    }

    pub fn log_det_c(&self) -> f64 {
        self.log_det_c
    }
}

/// Gradient of the negative log-density with respect to the emission parameters.
#[derive(Debug, Clone)]
pub struct EmissionGradient {
    pub nll: f64,
    pub d_mu: Vec<f64>,
    pub d_d: Vec<f64>,
    pub d_v: Matrix,
}

impl LowRankGaussian {
    pub fn new(mu: Vec<f64>, d: Vec<f64>, v: Matrix) -> Result<Self> {
        let n = mu.len();
        if d.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: d.len(),
            });
        }
        if v.rows() != n {
            return Err(Error::Dimension {
                expected: n,
                got: v.rows(),
            });
        }
        if v.cols() == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if let Some(i) = d.iter().position(|&di| !(di > 0.0) || !di.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "diagonal entry {i} must be positive and finite, got {}",
                d[i]
            )));
        }
        if mu.iter().chain(v.as_slice()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(
                "mean and factor entries must be finite".into(),
            ));
        }
        Ok(LowRankGaussian { mu, d, v })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn rank(&self) -> usize {
        self.v.cols()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn v(&self) -> &Matrix {
        &self.v
    }

    /// Dense `D + VVᵀ`. Quadratic in N; meant for reporting and tests.
    pub fn covariance(&self) -> Matrix {
        let n = self.dim();
        Matrix::from_fn(n, n, |i, j| {
            let low = linalg::dot(self.v.row(i), self.v.row(j));
            if i == j {
                low + self.d[i]
            } else {
                low
            }
        })
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Cholesky factor of `C = I_r + VᵀD⁻¹V`, built in `O(Nr² + r³)`.
pub fn capacitance(g: &LowRankGaussian) -> Result<CapacitanceFactor> {
    let r = g.rank();
    let mut c = vec![0.0; r * r];
    for (vi, &di) in g.v.iter_rows().zip(&g.d) {
        let inv = 1.0 / di;
        for a in 0..r {
            let s = vi[a] * inv;
            for b in 0..=a {
                c[a * r + b] += s * vi[b];
            }
        }
    }
    for a in 0..r {
        c[a * r + a] += 1.0;
        for b in 0..a {
            c[b * r + a] = c[a * r + b];
        }
    }
    linalg::cholesky_in_place(&mut c, r)?;
    let log_det_c = 2.0 * (0..r).map(|j| c[j * r + j].ln()).sum::<f64>();
    Ok(CapacitanceFactor {
        l_c: c,
        rank: r,
        log_det_c,
    })
}

/// `log|D + VVᵀ|` given the capacitance factor.
pub fn logdet_lowrank(g: &LowRankGaussian, cf: &CapacitanceFactor) -> f64 {
    cf.log_det_c + g.d.iter().map(|d| d.ln()).sum::<f64>()
}

/// `(x−μ)ᵀΣ⁻¹(x−μ)` via the Woodbury identity.
pub fn mahalanobis_lowrank(g: &LowRankGaussian, cf: &CapacitanceFactor, x: &[f64]) -> Result<f64> {
    g.check_len(x)?;
    let r = g.rank();
    let mut diag_term = 0.0;
    let mut y = vec![0.0; r];
    for i in 0..g.dim() {
        let resid = x[i] - g.mu[i];
        let s = resid / g.d[i];
        diag_term += resid * s;
        for (ya, va) in y.iter_mut().zip(g.v.row(i)) {
            *ya += va * s;
        }
    }
    linalg::solve_lower_in_place(&cf.l_c, r, &mut y);
    let correction: f64 = y.iter().map(|v| v * v).sum();
    Ok((diag_term - correction).max(0.0))
}

/// Log-density of `x` under `N(μ, D + VVᵀ)`.
pub fn logpdf_lowrank(g: &LowRankGaussian, x: &[f64]) -> Result<f64> {
    g.check_len(x)?;
    let cf = capacitance(g)?;
    let maha = mahalanobis_lowrank(g, &cf, x)?;
    Ok(-0.5 * (g.dim() as f64 * LN_2PI + logdet_lowrank(g, &cf) + maha))
}

/// Negative log-density together with its gradient with respect to `μ`,
/// the diagonal `d`, and the factor `V`.
///
/// With `α = Σ⁻¹(x−μ)`:
/// `∂/∂μ = −α`, `∂/∂d_i = ½(Σ⁻¹_ii − α_i²)`, `∂/∂V = D⁻¹VC⁻¹ − α(Vᵀα)ᵀ`.
pub fn nll_with_gradient(g: &LowRankGaussian, x: &[f64]) -> Result<EmissionGradient> {
    g.check_len(x)?;
    let n = g.dim();
    let r = g.rank();
    let cf = capacitance(g)?;

    // C⁻¹ from its Cholesky factor, column by column.
    let mut c_inv = vec![0.0; r * r];
    let mut col = vec![0.0; r];
    for j in 0..r {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        linalg::solve_lower_in_place(&cf.l_c, r, &mut col);
        linalg::solve_lower_transpose_in_place(&cf.l_c, r, &mut col);
        for i in 0..r {
            c_inv[i * r + j] = col[i];
        }
    }

    let resid: Vec<f64> = x.iter().zip(&g.mu).map(|(a, b)| a - b).collect();
    let mut y = vec![0.0; r];
    let mut diag_term = 0.0;
    for i in 0..n {
        let s = resid[i] / g.d[i];
        diag_term += resid[i] * s;
        for (ya, va) in y.iter_mut().zip(g.v.row(i)) {
            *ya += va * s;
        }
    }
    // w = C⁻¹ y
    let w: Vec<f64> = (0..r)
        .map(|a| linalg::dot(&c_inv[a * r..(a + 1) * r], &y))
        .collect();
    let maha = (diag_term - linalg::dot(&y, &w)).max(0.0);
    let nll = 0.5 * (n as f64 * LN_2PI + logdet_lowrank(g, &cf) + maha);

    let alpha: Vec<f64> = (0..n)
        .map(|i| (resid[i] - linalg::dot(g.v.row(i), &w)) / g.d[i])
        .collect();
    // Vᵀα
    let mut vt_alpha = vec![0.0; r];
    for i in 0..n {
        for (acc, va) in vt_alpha.iter_mut().zip(g.v.row(i)) {
            *acc += va * alpha[i];
        }
    }

    let d_mu: Vec<f64> = alpha.iter().map(|a| -a).collect();
    let mut d_d = vec![0.0; n];
    let mut d_v = Matrix::zeros(n, r);
    let mut vc = vec![0.0; r];
    for i in 0..n {
        let vi = g.v.row(i);
        for a in 0..r {
            vc[a] = linalg::dot(&c_inv[a * r..(a + 1) * r], vi);
        }
        let inv_d = 1.0 / g.d[i];
        let sigma_inv_ii = inv_d - inv_d * inv_d * linalg::dot(vi, &vc);
        d_d[i] = 0.5 * (sigma_inv_ii - alpha[i] * alpha[i]);
        let row = d_v.row_mut(i);
        for a in 0..r {
            row[a] = vc[a] * inv_d - alpha[i] * vt_alpha[a];
        }
    }
    Ok(EmissionGradient {
        nll,
        d_mu,
        d_d,
        d_v,
    })
}

/// Draws `count` i.i.d. rows from `N(μ, D + VVᵀ)` as `μ + D^{1/2}ε₁ + Vε₂`.
pub fn sample_lowrank<R: Rng + ?Sized>(g: &LowRankGaussian, rng: &mut R, count: usize) -> Matrix {
    let n = g.dim();
    let r = g.rank();
    let sqrt_d: Vec<f64> = g.d.iter().map(|d| d.sqrt()).collect();
    let mut out = Matrix::zeros(count, n);
    let mut latent = vec![0.0; r];
    for s in 0..count {
        for z in latent.iter_mut() {
            *z = rng.sample(StandardNormal);
        }
        let row = out.row_mut(s);
        for i in 0..n {
            let eps: f64 = rng.sample(StandardNormal);
            row[i] = g.mu[i] + sqrt_d[i] * eps + linalg::dot(g.v.row(i), &latent);
        }
    }
    out
}

/// Log-density through a dense Cholesky of the materialized `Σ`. `O(N³)`;
/// this is the reference the structured route is checked against.
pub fn dense_oracle_logpdf(g: &LowRankGaussian, x: &[f64]) -> Result<f64> {
    g.check_len(x)?;
    let n = g.dim();
    let cov = g.covariance();
    let sigma = DMatrix::from_row_slice(n, n, cov.as_slice());
    let chol = sigma.cholesky().ok_or(Error::Cholesky {
        pivot: 0,
        value: f64::NAN,
    })?;
    let resid = DVector::from_iterator(n, x.iter().zip(&g.mu).map(|(a, b)| a - b));
    let z = chol
        .l_dirty()
        .solve_lower_triangular(&resid)
        .ok_or(Error::Cholesky {
            pivot: 0,
            value: f64::NAN,
        })?;
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (n as f64 * LN_2PI + logdet + z.norm_squared()))
}
