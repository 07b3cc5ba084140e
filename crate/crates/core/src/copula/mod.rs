//! Nonparametric marginal transforms `f_i = Φ⁻¹ ∘ F̃_i`.
//!
//! Each series gets a linearly interpolated empirical CDF over its most
//! recent `m` observations, truncated to `[δ_m, 1 − δ_m]` so the normal
//! quantile is always finite.

mod normal;

pub use normal::{std_normal_cdf, std_normal_log_pdf, std_normal_quantile};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Truncation level `δ_m = 1 / (4 m^{1/4} √(π log m))`.
pub fn truncation_delta(m: usize) -> f64 {
    let m = m as f64;
    1.0 / (4.0 * m.powf(0.25) * (std::f64::consts::PI * m.ln()).sqrt())
}

/// Truncated, linearly interpolated empirical CDF.
///
/// The k-th order statistic (1-based) sits at level `(k − ½)/m`; the CDF is
/// linear between consecutive order statistics, 0 below the smallest sample
/// and 1 above the largest, then clamped to `[δ, 1 − δ]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted_values: Vec<f64>,
    delta: f64,
    jitter_scale: f64,
}

impl EmpiricalCdf {
    /// Fits on the last `m` entries of `values`. With `jitter_scale > 0`,
    /// each value gets uniform noise in `[0, jitter_scale)` before sorting.
    pub fn fit<R: Rng + ?Sized>(
        values: &[f64],
        m: usize,
        jitter_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if m < 2 {
            return Err(Error::InvalidArgument(format!(
                "ecdf window must be at least 2, got {m}"
            )));
        }
        if values.len() < m {
            return Err(Error::InvalidArgument(format!(
                "ecdf window {m} exceeds the {} available observations",
                values.len()
            )));
        }
        if !(jitter_scale >= 0.0) || !jitter_scale.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "jitter scale must be finite and nonnegative, got {jitter_scale}"
            )));
        }
        let window = &values[values.len() - m..];
        if let Some(bad) = window.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ecdf input contains non-finite value {bad}"
            )));
        }
        let mut sorted_values: Vec<f64> = if jitter_scale > 0.0 {
            window
                .iter()
                .map(|v| v + rng.random::<f64>() * jitter_scale)
                .collect()
        } else {
            window.to_vec()
        };
        sorted_values.sort_by(f64::total_cmp);
        Ok(EmpiricalCdf {
            sorted_values,
            delta: truncation_delta(m),
            jitter_scale,
        })
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted_values
    }

    pub fn m(&self) -> usize {
        self.sorted_values.len()
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn jitter_scale(&self) -> f64 {
        self.jitter_scale
    }

    pub fn min(&self) -> f64 {
        self.sorted_values[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted_values[self.m() - 1]
    }

    /// Untruncated interpolated CDF.
    fn raw(&self, v: f64) -> f64 {
        let xs = &self.sorted_values;
        let m = xs.len();
        let above = xs.partition_point(|&x| x <= v);
        if above == 0 {
            return 0.0;
        }
        if above == m {
            return if v == xs[m - 1] {
                (m as f64 - 0.5) / m as f64
            } else {
                1.0
            };
        }
        let k = above - 1;
        let frac = (v - xs[k]) / (xs[k + 1] - xs[k]);
        (k as f64 + 0.5 + frac) / m as f64
    }

    /// Truncated CDF, always in `[δ, 1 − δ]` and nondecreasing in `v`.
    pub fn eval(&self, v: f64) -> f64 {
        self.raw(v).clamp(self.delta, 1.0 - self.delta)
    }

    /// Piecewise-linear inverse of the interpolated CDF. Levels outside
    /// `[δ, 1 − δ]` (and outside the interpolation range) map to the
    /// smallest or largest sample.
    pub fn inverse(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "ecdf inverse requires 0 < u < 1, got {u}"
            )));
        }
        if u < self.delta {
            return Ok(self.min());
        }
        if u > 1.0 - self.delta {
            return Ok(self.max());
        }
        let m = self.m();
        let pos = u * m as f64 - 0.5;
        if pos <= 0.0 {
            return Ok(self.min());
        }
        if pos >= (m - 1) as f64 {
            return Ok(self.max());
        }
        let k = pos.floor() as usize;
        let frac = pos - k as f64;
        let xs = &self.sorted_values;
        Ok(xs[k] + frac * (xs[k + 1] - xs[k]))
    }

    /// Slope of the interpolated CDF at `v`; zero outside the sample range.
    pub fn density(&self, v: f64) -> f64 {
        let xs = &self.sorted_values;
        let m = xs.len();
        if v < xs[0] || v > xs[m - 1] {
            return 0.0;
        }
        let above = xs.partition_point(|&x| x <= v);
        // At the maximum, use the last segment of positive width ending there.
        let k = if above == m {
            match xs.windows(2).rposition(|w| w[1] > w[0]) {
                Some(k) => k,
                None => return f64::INFINITY,
            }
        } else {
            above - 1
        };
        1.0 / (m as f64 * (xs[k + 1] - xs[k]))
    }
}

/// Per-series map between data scale and the Gaussian scale.
///
/// `Ecdf` is the copula transform `Φ⁻¹ ∘ F̃`. `Affine` standardizes with a
/// location and scale; `Affine { loc: 0, scale: 1 }` disables the transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarginalTransform {
    Ecdf(EmpiricalCdf),
    Affine { loc: f64, scale: f64 },
}

impl MarginalTransform {
    pub fn identity() -> Self {
        MarginalTransform::Affine {
            loc: 0.0,
            scale: 1.0,
        }
    }

    /// Standardizing transform fitted on the last `window` values (all of
    /// them when `window` exceeds the length).
    pub fn standardize(values: &[f64], window: usize) -> Result<Self> {
        let tail = &values[values.len().saturating_sub(window)..];
        if tail.len() < 2 {
            return Err(Error::InvalidArgument(
                "standardization needs at least two observations".into(),
            ));
        }
        let n = tail.len() as f64;
        let loc = tail.iter().sum::<f64>() / n;
        let var = tail.iter().map(|v| (v - loc).powi(2)).sum::<f64>() / (n - 1.0);
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        if !loc.is_finite() || !scale.is_finite() {
            return Err(Error::InvalidArgument(
                "standardization input contains non-finite values".into(),
            ));
        }
        Ok(MarginalTransform::Affine { loc, scale })
    }

    /// Data scale to Gaussian scale.
    pub fn forward(&self, z: f64) -> f64 {
        match self {
            MarginalTransform::Ecdf(cdf) => std_normal_quantile(cdf.eval(z))
                .expect("truncated ecdf level lies strictly inside (0, 1)"),
            MarginalTransform::Affine { loc, scale } => (z - loc) / scale,
        }
    }

    /// Gaussian scale to data scale.
    pub fn inverse(&self, x: f64) -> f64 {
        match self {
            MarginalTransform::Ecdf(cdf) => {
                let u = std_normal_cdf(x);
                if u <= 0.0 {
                    cdf.min()
                } else if u >= 1.0 {
                    cdf.max()
                } else {
                    cdf.inverse(u).expect("level checked to lie in (0, 1)")
                }
            }
            MarginalTransform::Affine { loc, scale } => loc + scale * x,
        }
    }

    /// Change-of-variables term so that
    /// `log p(z) = log φ_{μ,Σ}(x) + Σ_i correction(z_i)` with `x_i = f_i(z_i)`.
    pub fn log_correction(&self, z: f64) -> Result<f64> {
        match self {
            MarginalTransform::Ecdf(cdf) => {
                let density = cdf.density(z);
                if !(density > 0.0) || !density.is_finite() {
                    return Err(Error::OutsideSupport { value: z });
                }
                Ok(log_correction_from(cdf.eval(z), density))
            }
            MarginalTransform::Affine { scale, .. } => Ok(-scale.ln()),
        }
    }

    /// Data-scale range that forecasts are confined to, if any.
    pub fn support(&self) -> Option<(f64, f64)> {
        match self {
            MarginalTransform::Ecdf(cdf) => Some((cdf.min(), cdf.max())),
            MarginalTransform::Affine { .. } => None,
        }
    }
}

/// `−log φ(Φ⁻¹(u)) + log p` for CDF level `u` and marginal density `p`.
pub fn log_correction_from(u: f64, density: f64) -> f64 {
    let x = std_normal_quantile(u).expect("level must lie in (0, 1)");
    -std_normal_log_pdf(x) + density.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cdf_of(values: &[f64]) -> EmpiricalCdf {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        EmpiricalCdf::fit(values, values.len(), 0.0, &mut rng).unwrap()
    }

    const DELTA_4: f64 = 0.084_707_593_950_388_11;

    #[test]
    fn delta_closed_form() {
        let cases = [
            (4, DELTA_4),
            (16, 0.042_353_796_975_194_064),
            (100, 0.020_784_626_763_613_683),
            (10_000, 0.004_647_583_833_040_165),
        ];
        for (m, want) in cases {
            assert!((truncation_delta(m) - want).abs() <= 1e-12);
        }
        assert!((cdf_of(&[1.0, 2.0, 3.0, 4.0]).delta() - DELTA_4).abs() < 1e-15);
    }

    #[test]
    fn fit_uses_most_recent_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cdf = EmpiricalCdf::fit(&[100.0, 3.0, 1.0, 2.0], 3, 0.0, &mut rng).unwrap();
        assert_eq!(cdf.sorted_values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn jitter_breaks_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cdf = EmpiricalCdf::fit(&[5.0; 4], 4, 0.01, &mut rng).unwrap();
        let xs = cdf.sorted_values();
        assert!(xs.windows(2).all(|w| w[1] > w[0]));
        assert!(xs.iter().all(|&x| (5.0..5.01).contains(&x)));
    }

    #[test]
    fn fit_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(EmpiricalCdf::fit(&[1.0], 1, 0.0, &mut rng).is_err());
        assert!(EmpiricalCdf::fit(&[1.0, 2.0], 3, 0.0, &mut rng).is_err());
        assert!(EmpiricalCdf::fit(&[1.0, f64::NAN], 2, 0.0, &mut rng).is_err());
    }

    #[test]
    fn eval_examples() {
        let cdf = cdf_of(&[4.0, 2.0, 1.0, 3.0]);
        assert!((cdf.eval(2.5) - 0.5).abs() < 1e-15);
        assert!((cdf.eval(0.0) - DELTA_4).abs() < 1e-15);
        assert!((cdf.eval(10.0) - (1.0 - DELTA_4)).abs() < 1e-15);
    }

    #[test]
    fn inverse_examples() {
        let cdf = cdf_of(&[1.0, 2.0, 3.0, 4.0]);
        assert!((cdf.inverse(0.5).unwrap() - 2.5).abs() < 1e-15);
        assert!((cdf.inverse(cdf.eval(2.2)).unwrap() - 2.2).abs() < 1e-12);
        assert_eq!(cdf.inverse(0.001).unwrap(), 1.0);
        assert_eq!(cdf.inverse(0.999).unwrap(), 4.0);
        assert!(cdf.inverse(0.0).is_err());
        assert!(cdf.inverse(1.0).is_err());
    }

    #[test]
    fn density_examples() {
        let cdf = cdf_of(&[1.0, 2.0, 3.0, 4.0]);
        assert!((cdf.density(2.5) - 0.25).abs() < 1e-15);
        let h = 1e-6;
        let fd = (cdf.eval(2.5 + h) - cdf.eval(2.5 - h)) / (2.0 * h);
        assert!((fd - 0.25).abs() < 1e-8);
        assert_eq!(cdf.density(100.0), 0.0);
        assert!((cdf_of(&[0.0, 1.0]).density(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn forward_and_inverse() {
        let values: Vec<f64> = (0..101).map(|i| i as f64).collect();
        let t = MarginalTransform::Ecdf(cdf_of(&values));
        assert!(t.forward(50.0).abs() < 1e-12);
        for z in [10.3, 25.0, 49.99, 77.7] {
            assert!((t.inverse(t.forward(z)) - z).abs() <= 1e-9);
        }
        let delta = truncation_delta(101);
        let low = std_normal_quantile(delta).unwrap();
        assert_eq!(t.forward(-5.0), low);
        assert!(low.is_finite());
    }

    #[test]
    fn log_correction_examples() {
        assert!((log_correction_from(0.5, 1.0) - 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((log_correction_from(0.5, 0.25) - (-0.467_355_827_915_217_9)).abs() < 1e-12);
        // When the marginal CDF is Φ itself the correction cancels.
        for x in [-1.5, 0.0, 0.7] {
            let u = std_normal_cdf(x);
            let c = log_correction_from(u, std_normal_log_pdf(x).exp());
            assert!(c.abs() < 1e-9);
        }
        let cdf = cdf_of(&[1.0, 2.0, 3.0, 4.0]);
        let t = MarginalTransform::Ecdf(cdf);
        assert!(matches!(t.log_correction(7.0), Err(Error::OutsideSupport { .. })));
        assert!((t.log_correction(2.5).unwrap() - (-0.467_355_827_915_217_9)).abs() < 1e-12);
    }

    #[test]
    fn affine_transform() {
        let t = MarginalTransform::standardize(&[1.0, 2.0, 3.0], 10).unwrap();
        assert!(t.forward(2.0).abs() < 1e-15);
        assert!((t.inverse(t.forward(2.7)) - 2.7).abs() < 1e-14);
        assert!((t.log_correction(0.0).unwrap() - 0.0).abs() < 1e-15);
        let id = MarginalTransform::identity();
        assert_eq!(id.forward(3.25), 3.25);
        assert_eq!(id.support(), None);
    }

    #[test]
    fn transformed_window_is_close_to_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let values: Vec<f64> = (0..100).map(|_| rng.random::<f64>().powi(3) * 7.0).collect();
        let t = MarginalTransform::Ecdf(EmpiricalCdf::fit(&values, 100, 0.0, &mut rng).unwrap());
        let mut xs: Vec<f64> = values.iter().map(|&z| t.forward(z)).collect();
        xs.sort_by(f64::total_cmp);
        let m = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                let p = std_normal_cdf(x);
                ((k + 1) as f64 / m - p).abs().max((p - k as f64 / m).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks <= 2.0 * (1.0 / m.sqrt() + truncation_delta(100)));
    }

    proptest! {
        #[test]
        fn eval_is_monotone_and_bounded(
            mut data in prop::collection::vec(-100.0f64..100.0, 2..60),
            a in -150.0f64..150.0,
            b in -150.0f64..150.0,
        ) {
            data.dedup();
            prop_assume!(data.len() >= 2);
            let cdf = cdf_of(&data);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (flo, fhi) = (cdf.eval(lo), cdf.eval(hi));
            prop_assert!(flo <= fhi);
            for f in [flo, fhi] {
                prop_assert!(f >= cdf.delta() && f <= 1.0 - cdf.delta());
            }
        }

        #[test]
        fn density_integrates_to_cdf_increments(
            data in prop::collection::btree_set(-1000i32..1000, 3..40),
            s in 0.0f64..1.0,
            t in 0.0f64..1.0,
        ) {
            let data: Vec<f64> = data.into_iter().map(|v| v as f64 / 10.0).collect();
            let cdf = cdf_of(&data);
            let (lo, hi) = (cdf.min(), cdf.max());
            let a = lo + (hi - lo) * s.min(t);
            let b = lo + (hi - lo) * s.max(t);
            // Integrate segment by segment; the density is constant on each.
            let mut knots: Vec<f64> = vec![a];
            knots.extend(data.iter().copied().filter(|&x| x > a && x < b));
            knots.push(b);
            let integral: f64 = knots
                .windows(2)
                .map(|w| {
                    let mid = 0.5 * (w[0] + w[1]);
                    cdf.density(mid) * (w[1] - w[0])
                })
                .sum();
            let raw = |v: f64| cdf.raw(v);
            prop_assert!((integral - (raw(b) - raw(a))).abs() <= 1e-10);
        }

        #[test]
        fn round_trip_on_interior(
            data in prop::collection::btree_set(-1000i32..1000, 3..80),
            s in 0.0f64..1.0,
        ) {
            let data: Vec<f64> = data.into_iter().map(|v| v as f64 / 7.0).collect();
            let cdf = cdf_of(&data);
            let z = cdf.min() + (cdf.max() - cdf.min()) * s;
            let u = cdf.raw(z);
            prop_assume!(u > cdf.delta() && u < 1.0 - cdf.delta());
            let t = MarginalTransform::Ecdf(cdf);
            prop_assert!((t.inverse(t.forward(z)) - z).abs() <= 1e-9);
        }
    }
}
