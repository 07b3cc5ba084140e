//! Proper scoring rules on sample forecasts: pinball loss, quantile-based
//! CRPS, CRPS-Sum, MSE and MSE-Sum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecasting::{nearest_rank, ForecastSamples};
use crate::linalg::Matrix;

/// `Λ_α(q, y) = (α − 1[y < q])(y − q)`.
pub fn pinball(alpha: f64, q: f64, y: f64) -> f64 {
    let indicator = if y < q { 1.0 } else { 0.0 };
    (alpha - indicator) * (y - q)
}

/// Quantile levels of the CRPS integral.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CrpsLevels {
    /// `(j − ½)/10` for `j = 1..10`.
    #[default]
    Midpoint,
    /// `0.1, …, 0.9`.
    Deciles,
    /// `0.1, …, 1.0`.
    DecilesWithOne,
}

impl CrpsLevels {
    pub fn levels(self) -> Vec<f64> {
        match self {
            CrpsLevels::Midpoint => (1..=10).map(|j| (j as f64 - 0.5) / 10.0).collect(),
            CrpsLevels::Deciles => (1..=9).map(|j| j as f64 / 10.0).collect(),
            CrpsLevels::DecilesWithOne => (1..=10).map(|j| j as f64 / 10.0).collect(),
        }
    }

    /// Levels as integer numerators over a common denominator.
    fn fractions(self) -> (Vec<i64>, i64) {
        match self {
            CrpsLevels::Midpoint => ((1..=10).map(|j| 2 * j - 1).collect(), 20),
            CrpsLevels::Deciles => ((1..=9).collect(), 10),
            CrpsLevels::DecilesWithOne => ((1..=10).collect(), 10),
        }
    }
}

/// Sorted sample quantiles at the given levels.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileForecast {
    pub levels: Vec<f64>,
    pub values: Vec<f64>,
}

impl QuantileForecast {
    pub fn from_samples(samples: &[f64], levels: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("CRPS needs at least one sample".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(QuantileForecast {
            levels: levels.to_vec(),
            values: levels.iter().map(|&a| nearest_rank(&sorted, a)).collect(),
        })
    }

    /// `(1/K) Σ_j 2Λ_{α_j}(q_j, y)`.
    pub fn crps(&self, y: f64) -> f64 {
        let total: f64 = self
            .levels
            .iter()
            .zip(&self.values)
            .map(|(&a, &q)| 2.0 * pinball(a, q, y))
            .sum();
        total / self.levels.len() as f64
    }
}

/// Same value as [`QuantileForecast::crps`], but the weights of equal
/// quantiles are summed as integers first, so a point mass at `q` scores
/// exactly `|y − q|`.
pub fn crps_with_levels(samples: &[f64], y: f64, levels: CrpsLevels) -> Result<f64> {
    let q = QuantileForecast::from_samples(samples, &levels.levels())?;
    let (num, den) = levels.fractions();
    let scale = (den * num.len() as i64) as f64 / 2.0;
    let mut total = 0.0;
    let mut j = 0;
    while j < num.len() {
        let qj = q.values[j];
        let mut weight = 0i64;
        while j < num.len() && q.values[j] == qj {
            weight += num[j] - if y < qj { den } else { 0 };
            j += 1;
        }
        total += (weight as f64 / scale) * (y - qj);
    }
    Ok(total)
}

/// Sample CRPS with the 10 midpoint quantile levels.
pub fn crps_from_samples(samples: &[f64], y: f64) -> Result<f64> {
    crps_with_levels(samples, y, CrpsLevels::Midpoint)
}

fn check_actuals(fc: &ForecastSamples, actuals: &Matrix) -> Result<()> {
    if actuals.rows() != fc.num_series() || actuals.cols() != fc.horizon() {
        return Err(Error::Data(format!(
            "actuals are {}×{} but the forecast covers {} series over {} steps",
            actuals.rows(),
            actuals.cols(),
            fc.num_series(),
            fc.horizon()
        )));
    }
    Ok(())
}

/// Mean CRPS over every (series, step) cell.
pub fn crps_marginal(fc: &ForecastSamples, actuals: &Matrix, levels: CrpsLevels) -> Result<f64> {
    check_actuals(fc, actuals)?;
    let mut total = 0.0;
    for i in 0..fc.num_series() {
        for t in 0..fc.horizon() {
            total += crps_with_levels(&fc.marginal(i, t), actuals[(i, t)], levels)?;
        }
    }
    Ok(total / (fc.num_series() * fc.horizon()) as f64)
}

/// CRPS of the across-series sum, averaged over steps.
pub fn crps_sum(fc: &ForecastSamples, actuals: &Matrix, levels: CrpsLevels) -> Result<f64> {
    check_actuals(fc, actuals)?;
    let mut total = 0.0;
    for t in 0..fc.horizon() {
        let y: f64 = (0..fc.num_series()).map(|i| actuals[(i, t)]).sum();
        total += crps_with_levels(&fc.summed(t), y, levels)?;
    }
    Ok(total / fc.horizon() as f64)
}

/// Mean squared error of the per-cell sample mean.
pub fn mse(fc: &ForecastSamples, actuals: &Matrix) -> Result<f64> {
    check_actuals(fc, actuals)?;
    let mean = fc.mean();
    let total: f64 = mean.as_slice().iter().zip(actuals.as_slice()).map(|(m, y)| (m - y).powi(2)).sum();
    Ok(total / (fc.num_series() * fc.horizon()) as f64)
}

/// [`mse`] of the across-series sum.
pub fn mse_sum(fc: &ForecastSamples, actuals: &Matrix) -> Result<f64> {
    check_actuals(fc, actuals)?;
    let mut total = 0.0;
    for t in 0..fc.horizon() {
        let s = fc.summed(t);
        let m = s.iter().sum::<f64>() / s.len() as f64;
        let y: f64 = (0..fc.num_series()).map(|i| actuals[(i, t)]).sum();
        total += (m - y).powi(2);
    }
    Ok(total / fc.horizon() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub crps: f64,
    pub crps_sum: f64,
    pub mse: f64,
    pub mse_sum: f64,
    pub num_samples: usize,
    pub horizon: usize,
    pub windows: usize,
}

impl MetricsReport {
    pub fn for_window(fc: &ForecastSamples, actuals: &Matrix, levels: CrpsLevels) -> Result<Self> {
        Ok(MetricsReport {
            crps: crps_marginal(fc, actuals, levels)?,
            crps_sum: crps_sum(fc, actuals, levels)?,
            mse: mse(fc, actuals)?,
            mse_sum: mse_sum(fc, actuals)?,
            num_samples: fc.num_samples(),
            horizon: fc.horizon(),
            windows: 1,
        })
    }

    /// Mean of per-window metrics.
    pub fn average(reports: &[MetricsReport]) -> Result<Self> {
        let first = reports
            .first()
            .ok_or_else(|| Error::InvalidArgument("no windows to average".into()))?;
        let k = reports.len() as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Ok(MetricsReport {
            crps: mean(|r| r.crps),
            crps_sum: mean(|r| r.crps_sum),
            mse: mean(|r| r.mse),
            mse_sum: mean(|r| r.mse_sum),
            num_samples: first.num_samples,
            horizon: first.horizon,
            windows: reports.iter().map(|r| r.windows).sum(),
        })
    }
}

/// Scores each `(forecast, actuals)` window and averages.
pub fn evaluate(windows: &[(ForecastSamples, Matrix)], levels: CrpsLevels) -> Result<MetricsReport> {
    let per_window = windows
        .iter()
        .map(|(fc, y)| MetricsReport::for_window(fc, y, levels))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::average(&per_window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("s{i}")).collect()
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball(0.5, 0.0, 2.0), 1.0);
        assert!((pinball(0.9, 5.0, 3.0) - 0.2).abs() < 1e-15);
        for a in [0.0, 0.3, 1.0] {
            assert_eq!(pinball(a, 1.5, 1.5), 0.0);
        }
    }

    #[test]
    fn point_mass_identity() {
        for (q, y) in [(1.0, 3.5), (-2.0, 0.25), (0.0, 0.0), (7.0, -1.0), (1.0, 0.0), (0.1, 0.7)] {
            for levels in [CrpsLevels::Midpoint, CrpsLevels::Deciles] {
                assert_eq!(crps_with_levels(&[q; 17], y, levels).unwrap(), (y - q).abs());
            }
        }
        assert!(crps_from_samples(&[], 0.0).is_err());
    }

    #[test]
    fn gaussian_crps_at_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let expected = (2f64.sqrt() - 1.0) / std::f64::consts::PI.sqrt();
        assert!((expected - 0.2337).abs() < 1e-4);
        assert!((crps_from_samples(&xs, 0.0).unwrap() - expected).abs() < 0.02);
    }

    #[test]
    fn propriety_sanity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let trials = 1000;
        let diffs: Vec<f64> = (0..trials)
            .map(|_| {
                let y: f64 = StandardNormal.sample(&mut rng);
                let good: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
                let bad: Vec<f64> = good.iter().map(|x| x + 1.0).collect();
                crps_from_samples(&bad, y).unwrap() - crps_from_samples(&good, y).unwrap()
            })
            .collect();
        let mean = diffs.iter().sum::<f64>() / trials as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!(mean > 5.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn marginal_reductions() {
        let samples = vec![0.5, 1.0, 2.0, -1.0];
        let single = ForecastSamples::new(samples.clone(), 4, 1, 1, ids(1)).unwrap();
        let y = Matrix::from_vec(1, 1, vec![0.7]).unwrap();
        let direct = crps_from_samples(&samples, 0.7).unwrap();
        assert_eq!(crps_marginal(&single, &y, CrpsLevels::Midpoint).unwrap(), direct);
        assert_eq!(crps_sum(&single, &y, CrpsLevels::Midpoint).unwrap(), direct);

        // Two identical dimensions: layout is [sample][series][step].
        let doubled: Vec<f64> = samples.iter().flat_map(|&v| [v, v]).collect();
        let two = ForecastSamples::new(doubled, 4, 2, 1, ids(2)).unwrap();
        let y2 = Matrix::from_vec(2, 1, vec![0.7, 0.7]).unwrap();
        assert_eq!(crps_marginal(&two, &y2, CrpsLevels::Midpoint).unwrap(), direct);

        let perfect = ForecastSamples::new(vec![0.7, 0.7], 1, 2, 1, ids(2)).unwrap();
        assert_eq!(crps_marginal(&perfect, &y2, CrpsLevels::Midpoint).unwrap(), 0.0);
    }

    #[test]
    fn anticorrelated_constant_sum_scores_zero() {
        let data: Vec<f64> = (0..8).flat_map(|s| [s as f64, 3.0 - s as f64]).collect();
        let fc = ForecastSamples::new(data, 8, 2, 1, ids(2)).unwrap();
        let y = Matrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
        assert_eq!(crps_sum(&fc, &y, CrpsLevels::Midpoint).unwrap(), 0.0);
    }

    #[test]
    fn dependence_changes_crps_sum() {
        // Same marginals {0, 1, 2, 3}; comonotone vs shifted pairing.
        let comonotone: Vec<f64> = (0..4).flat_map(|s| [s as f64, s as f64]).collect();
        let shuffled: Vec<f64> = (0..4).flat_map(|s| [s as f64, ((s + 2) % 4) as f64]).collect();
        let y = Matrix::from_vec(2, 1, vec![3.0, 3.0]).unwrap();
        let a = ForecastSamples::new(comonotone, 4, 2, 1, ids(2)).unwrap();
        let b = ForecastSamples::new(shuffled, 4, 2, 1, ids(2)).unwrap();
        let levels = CrpsLevels::Midpoint;
        assert_eq!(
            crps_marginal(&a, &y, levels).unwrap(),
            crps_marginal(&b, &y, levels).unwrap()
        );
        // Sums {0, 2, 4, 6} vs {2, 4, 2, 4} against 6.
        let ca = crps_sum(&a, &y, levels).unwrap();
        let cb = crps_sum(&b, &y, levels).unwrap();
        assert!((ca - brute_force(&[0.0, 2.0, 4.0, 6.0], 6.0)).abs() < 1e-15);
        assert!((cb - brute_force(&[2.0, 2.0, 4.0, 4.0], 6.0)).abs() < 1e-15);
        assert!((ca - 1.96).abs() < 1e-12);
        assert!((cb - 2.5).abs() < 1e-12);
    }

    /// Independent CRPS: explicit nearest-rank indices, direct pinball sum.
    fn brute_force(sorted: &[f64], y: f64) -> f64 {
        let s = sorted.len() as f64;
        let mut total = 0.0;
        for j in 1..=10 {
            let a = (j as f64 - 0.5) / 10.0;
            let mut k = 1;
            while (k as f64) < a * s {
                k += 1;
            }
            let q = sorted[k - 1];
            total += 2.0 * if y < q { (a - 1.0) * (y - q) } else { a * (y - q) };
        }
        total / 10.0
    }

    #[test]
    fn mse_examples() {
        let fc = ForecastSamples::new(vec![1.0, 3.0], 1, 2, 1, ids(2)).unwrap();
        let y = Matrix::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
        assert_eq!(mse(&fc, &y).unwrap(), 0.5);
        let exact = ForecastSamples::new(vec![1.0, 2.0], 1, 2, 1, ids(2)).unwrap();
        assert_eq!(mse(&exact, &y).unwrap(), 0.0);
        let c = 0.75;
        let offset = ForecastSamples::new(vec![1.0 + c, 2.0 + c, 3.0 + c], 1, 3, 1, ids(3)).unwrap();
        let y3 = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!((mse(&offset, &y3).unwrap() - c * c).abs() < 1e-15);
        assert!((mse_sum(&offset, &y3).unwrap() - 9.0 * c * c).abs() < 1e-12);
    }

    #[test]
    fn window_averaging() {
        let y = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let a = ForecastSamples::new(vec![1.0], 1, 1, 1, ids(1)).unwrap();
        let b = ForecastSamples::new(vec![3.0], 1, 1, 1, ids(1)).unwrap();
        let r = evaluate(&[(a, y.clone()), (b, y)], CrpsLevels::Midpoint).unwrap();
        assert_eq!(r.crps, 2.0);
        assert_eq!(r.crps_sum, 2.0);
        assert_eq!(r.mse, 5.0);
        assert_eq!(r.windows, 2);
        let json = serde_json::to_value(r).unwrap();
        assert!(json.get("crps_sum").is_some());
    }

    #[test]
    fn level_sets() {
        assert_eq!(CrpsLevels::Midpoint.levels()[0], 0.05);
        assert_eq!(CrpsLevels::Deciles.levels().len(), 9);
        assert_eq!(*CrpsLevels::DecilesWithOne.levels().last().unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn grouped_sum_matches_direct_sum(xs in prop::collection::vec(-10.0f64..10.0, 1..40), y in -10.0f64..10.0) {
            let levels = CrpsLevels::Midpoint.levels();
            let direct = QuantileForecast::from_samples(&xs, &levels).unwrap().crps(y);
            let grouped = crps_from_samples(&xs, y).unwrap();
            prop_assert!((direct - grouped).abs() <= 1e-12 * (1.0 + direct.abs()));
        }

        #[test]
        fn point_mass_is_exact(q in -1e3f64..1e3, y in -1e3f64..1e3, s in 1usize..30) {
            prop_assert_eq!(crps_from_samples(&vec![q; s], y).unwrap(), (y - q).abs());
        }

        #[test]
        fn crps_is_nonnegative(xs in prop::collection::vec(-100.0f64..100.0, 1..50), y in -100.0f64..100.0) {
            let c = crps_from_samples(&xs, y).unwrap();
            prop_assert!(c >= 0.0);
        }

        #[test]
        fn crps_zero_iff_quantiles_hit(xs in prop::collection::vec(-5i32..5, 1..20), y in -5i32..5) {
            let xs: Vec<f64> = xs.into_iter().map(f64::from).collect();
            let y = f64::from(y);
            let q = QuantileForecast::from_samples(&xs, &CrpsLevels::Midpoint.levels()).unwrap();
            let all_hit = q.values.iter().all(|&v| v == y);
            prop_assert_eq!(crps_from_samples(&xs, y).unwrap() == 0.0, all_hit);
        }

        #[test]
        fn crps_ignores_sample_order(mut xs in prop::collection::vec(-10.0f64..10.0, 1..40), y in -10.0f64..10.0) {
            let a = crps_from_samples(&xs, y).unwrap();
            xs.reverse();
            prop_assert_eq!(a, crps_from_samples(&xs, y).unwrap());
        }
    }
}
