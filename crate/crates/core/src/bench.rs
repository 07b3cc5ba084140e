//! Wall-clock scaling measurements: low-rank log-density against dimension
//! and Monte Carlo rollout against the number of sample paths.

use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::TimeSeriesPanel;
use crate::error::Result;
use crate::forecasting::{condition, rollout, History};
use crate::linalg::Matrix;
use crate::lowrank::{dense_oracle_logpdf, logpdf_lowrank, LowRankGaussian};
use crate::model::Model;

/// Random instance with `d ∈ [0.5, 1.5)`, `V` and `x` uniform in `[−1, 1)`.
pub fn random_instance<R: Rng + ?Sized>(n: usize, rank: usize, rng: &mut R) -> (LowRankGaussian, Vec<f64>) {
    let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let v = Matrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    let x = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (LowRankGaussian::new(mu, d, v).expect("positive diagonal"), x)
}

/// Best-of-`repeats` seconds per call; each repeat runs `f` until at least
/// `min_batch` has elapsed.
pub fn time_per_call<F: FnMut()>(mut f: F, repeats: usize, min_batch: Duration) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..repeats {
        let start = Instant::now();
        let mut calls = 0u64;
        while start.elapsed() < min_batch || calls == 0 {
            f();
            calls += 1;
        }
        best = best.min(start.elapsed().as_secs_f64() / calls as f64);
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogpdfTiming {
    pub n: usize,
    pub rank: usize,
    pub seconds: f64,
    /// Median time relative to the previous row, paired by round.
    pub ratio: Option<f64>,
}

/// Times each dimension in interleaved rounds. `seconds` is the median time
/// per call; `ratio` is the median over rounds of the time relative to the
/// previous dimension in the same round.
pub fn logpdf_scaling(dims: &[usize], rank: usize, seed: u64) -> Result<Vec<LogpdfTiming>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(dims.len());
    for &n in dims {
        let (g, x) = random_instance(n, rank, &mut rng);
        logpdf_lowrank(&g, &x)?;
        instances.push((g, x));
    }
    let rounds = 9;
    let mut times = vec![Vec::with_capacity(rounds); dims.len()];
    for _ in 0..rounds {
        for (t, (g, x)) in times.iter_mut().zip(&instances) {
            t.push(time_per_call(
                || {
                    black_box(logpdf_lowrank(black_box(g), black_box(x)).ok());
                },
                1,
                Duration::from_millis(30),
            ));
        }
    }
    Ok(dims
        .iter()
        .enumerate()
        .map(|(k, &n)| LogpdfTiming {
            n,
            rank,
            seconds: median(times[k].clone()),
            ratio: (k > 0).then(|| median(times[k].iter().zip(&times[k - 1]).map(|(a, b)| a / b).collect())),
        })
        .collect())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Dense-oracle seconds per call at dimension `n`.
pub fn dense_timing(n: usize, rank: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (g, x) = random_instance(n, rank, &mut rng);
    dense_oracle_logpdf(&g, &x)?;
    Ok(time_per_call(
        || {
            black_box(dense_oracle_logpdf(black_box(&g), black_box(&x)).ok());
        },
        3,
        Duration::from_millis(50),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RolloutTiming {
    pub samples: usize,
    pub seconds: f64,
    /// Median time relative to the first row, paired by round.
    pub ratio: f64,
}

/// Rollout time for each sample count, conditioned once at `origin`. Counts
/// are timed back to back in each of several rounds; `ratio` is the median
/// over rounds of the time relative to the first count in the same round,
/// which cancels slow drifts in machine speed. `seconds` is the median time.
pub fn rollout_scaling(
    model: &Model,
    panel: &TimeSeriesPanel,
    origin: usize,
    horizon: usize,
    sample_counts: &[usize],
    seed: u64,
) -> Result<Vec<RolloutTiming>> {
    let history = History::new(model, panel, origin, horizon)?;
    let state = condition(model, &history)?;
    for &s in sample_counts {
        rollout(model, &history, &state, s, seed)?;
    }
    let rounds = 9;
    let mut times = vec![Vec::with_capacity(rounds); sample_counts.len()];
    for _ in 0..rounds {
        for (t, &s) in times.iter_mut().zip(sample_counts) {
            t.push(time_per_call(
                || {
                    black_box(rollout(model, &history, &state, s, seed).ok());
                },
                1,
                Duration::from_millis(20),
            ));
        }
    }
    Ok(sample_counts
        .iter()
        .zip(&times)
        .map(|(&samples, t)| RolloutTiming {
            samples,
            seconds: median(t.clone()),
            ratio: median(t.iter().zip(&times[0]).map(|(a, b)| a / b).collect()),
        })
        .collect())
}
