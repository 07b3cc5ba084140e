use serde::{Deserialize, Serialize};

/// Layout of the per-step network input:
/// `[x_{t−1}, x_{t−l} for each extra lag l, covariates(t)]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Lags beyond 1, ascending. Lag 1 is the previous value itself.
    pub extra_lags: Vec<usize>,
    pub covariate_width: usize,
}

impl FeatureSpec {
    pub fn new(lags: &[usize], covariate_width: usize) -> Self {
        let mut extra_lags: Vec<usize> = lags.iter().copied().filter(|&l| l > 1).collect();
        extra_lags.sort_unstable();
        extra_lags.dedup();
        FeatureSpec {
            extra_lags,
            covariate_width,
        }
    }

    pub fn input_width(&self) -> usize {
        1 + self.extra_lags.len() + self.covariate_width
    }

    pub fn max_lag(&self) -> usize {
        self.extra_lags.last().copied().unwrap_or(1)
    }

    /// Writes the input for one step into `out`. `back(k)` is the
    /// transformed value `k ≥ 1` steps before the current step, or 0 when
    /// it precedes the available history.
    pub fn fill(&self, out: &mut Vec<f64>, back: impl Fn(usize) -> f64, covariates: &[f64]) {
        debug_assert_eq!(covariates.len(), self.covariate_width);
        out.clear();
        out.push(back(1));
        out.extend(self.extra_lags.iter().map(|&l| back(l)));
        out.extend_from_slice(covariates);
    }
}
