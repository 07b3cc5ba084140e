//! Conditioning on observed history and Monte Carlo rollout of joint sample
//! paths, mapped back to the data scale.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{build_covariates, write_atomic, Frequency, TimeSeriesPanel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lowrank::{sample_lowrank, LowRankGaussian};
use crate::model::Model;
use crate::net::{assemble, NetworkState};
use crate::training::stream_rng;

/// Sample paths use RNG streams from here upwards, one per path.
const PATH_STREAM_BASE: u64 = 1 << 32;

/// Quantile levels of the summary CSV.
pub const SUMMARY_LEVELS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// `S × N × τ` joint predictive samples in the data scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSamples {
    data: Vec<f64>,
    num_samples: usize,
    num_series: usize,
    horizon: usize,
    pub series_ids: Vec<String>,
    /// Label of the first forecast step.
    pub start_time: Option<String>,
    pub frequency: Option<Frequency>,
}

impl ForecastSamples {
    pub fn new(data: Vec<f64>, num_samples: usize, num_series: usize, horizon: usize, series_ids: Vec<String>) -> Result<Self> {
        if num_samples == 0 || horizon == 0 {
            return Err(Error::InvalidArgument("forecast needs at least one sample and one step".into()));
        }
        if data.len() != num_samples * num_series * horizon {
            return Err(Error::Dimension {
                expected: num_samples * num_series * horizon,
                got: data.len(),
            });
        }
        if series_ids.len() != num_series {
            return Err(Error::Dimension {
                expected: num_series,
                got: series_ids.len(),
            });
        }
        Ok(ForecastSamples {
            data,
            num_samples,
            num_series,
            horizon,
            series_ids,
            start_time: None,
            frequency: None,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_series(&self) -> usize {
        self.num_series
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn get(&self, sample: usize, series: usize, step: usize) -> f64 {
        self.data[(sample * self.num_series + series) * self.horizon + step]
    }

    /// The `S` draws of one series at one step.
    pub fn marginal(&self, series: usize, step: usize) -> Vec<f64> {
        (0..self.num_samples).map(|s| self.get(s, series, step)).collect()
    }

    /// The `S` draws of the across-series sum at one step.
    pub fn summed(&self, step: usize) -> Vec<f64> {
        (0..self.num_samples)
            .map(|s| (0..self.num_series).map(|i| self.get(s, i, step)).sum())
            .collect()
    }

    /// Per-cell sample mean, `N × τ`.
    pub fn mean(&self) -> Matrix {
        Matrix::from_fn(self.num_series, self.horizon, |i, t| {
            self.marginal(i, t).iter().sum::<f64>() / self.num_samples as f64
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Observed history up to a forecast origin on the transformed scale, plus
/// covariates through the end of the horizon.
#[derive(Debug, Clone)]
pub struct History {
    transformed: Matrix,
    covariates: Vec<Vec<f64>>,
    horizon: usize,
    start_time: String,
    frequency: Frequency,
}

impl History {
    /// History of `panel` before `origin`, set up for `horizon` forecast steps.
    pub fn new(model: &Model, panel: &TimeSeriesPanel, origin: usize, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if origin < model.context_length || origin == 0 {
            return Err(Error::Data(format!(
                "forecast origin {origin} leaves fewer than the {} context steps",
                model.context_length
            )));
        }
        if origin > panel.len() {
            return Err(Error::Data(format!(
                "forecast origin {origin} lies past the panel end {}",
                panel.len()
            )));
        }
        let observed = panel.truncate(origin)?;
        let prepared = model.prepare(&observed)?;
        let future = observed.timestamps().extend(horizon, observed.frequency());
        let covariates = build_covariates(&future, observed.frequency(), model.scale_features);
        Ok(History {
            transformed: prepared.transformed,
            covariates,
            horizon,
            start_time: future.label(origin),
            frequency: observed.frequency(),
        })
    }

    pub fn origin(&self) -> usize {
        self.transformed.cols()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    fn input(&self, model: &Model, i: usize, t: usize, path: &[Vec<f64>], out: &mut Vec<f64>) {
        let origin = self.origin();
        let row = self.transformed.row(i);
        model.features.fill(
            out,
            |k| {
                if t < k {
                    0.0
                } else if t - k >= origin {
                    path[i][t - k - origin]
                } else {
                    row[t - k]
                }
            },
            &self.covariates[t],
        );
    }
}

/// Unrolls every series over the last `T′` steps before the origin.
///
/// The returned state has consumed inputs up to step `origin − 1`; the first
/// rollout step feeds the last observation.
pub fn condition(model: &Model, history: &History) -> Result<NetworkState> {
    let params = &model.params;
    let origin = history.origin();
    let start = origin - model.context_length;
    let mut state = NetworkState::zeros(&params.shape, model.num_series());
    let mut buf = Vec::with_capacity(params.shape.input_width);
    for t in start..origin {
        for (i, s) in state.series.iter_mut().enumerate() {
            history.input(model, i, t, &[], &mut buf);
            s.advance(params, &buf, i, t)?;
        }
    }
    Ok(state)
}

/// Draws `num_samples` independent joint paths over the horizon. Path `s`
/// uses its own RNG stream, so any subset of paths is reproducible alone.
pub fn rollout(model: &Model, history: &History, state: &NetworkState, num_samples: usize, seed: u64) -> Result<ForecastSamples> {
    if num_samples == 0 {
        return Err(Error::Config("num_samples must be positive".into()));
    }
    let n = model.num_series();
    let tau = history.horizon();
    let origin = history.origin();
    let indices: Vec<usize> = (0..n).collect();
    let mut data = vec![0.0; num_samples * n * tau];
    let mut buf = Vec::with_capacity(model.params.shape.input_width);
    for s in 0..num_samples {
        let mut rng = stream_rng(seed, PATH_STREAM_BASE + s as u64);
        let mut st = state.clone();
        let mut path: Vec<Vec<f64>> = vec![Vec::with_capacity(tau); n];
        for j in 0..tau {
            let t = origin + j;
            for (i, series_state) in st.series.iter_mut().enumerate() {
                history.input(model, i, t, &path, &mut buf);
                series_state.advance(&model.params, &buf, i, t)?;
            }
            let tops: Vec<&[f64]> = st.series.iter().map(|s| s.top()).collect();
            let g = assemble(&model.params, &tops, &indices).map_err(|e| e.at_step(t))?;
            let x = sample_lowrank(&g, &mut rng, 1);
            for (i, &xi) in x.row(0).iter().enumerate() {
                let z = model.transforms[i].inverse(xi);
                if !xi.is_finite() || !z.is_finite() {
                    return Err(Error::NonFinite {
                        what: "forecast sample",
                        series: i,
                        step: t,
                    });
                }
                path[i].push(xi);
                data[(s * n + i) * tau + j] = z;
            }
        }
    }
    let mut out = ForecastSamples::new(data, num_samples, n, tau, model.series_ids.clone())?;
    out.start_time = Some(history.start_time.clone());
    out.frequency = Some(history.frequency);
    Ok(out)
}

/// Conditions on `panel[..origin]` and samples `horizon` steps ahead.
pub fn forecast(
    model: &Model,
    panel: &TimeSeriesPanel,
    origin: usize,
    horizon: usize,
    num_samples: usize,
    seed: u64,
) -> Result<ForecastSamples> {
    let history = History::new(model, panel, origin, horizon)?;
    let state = condition(model, &history)?;
    rollout(model, &history, &state, num_samples, seed)
}

/// One-step-ahead emission on the transformed scale at step `t`, given the
/// observations before `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceRow {
    pub t: usize,
    pub label: String,
    pub mu: Vec<f64>,
    /// Lower triangle of `D + VVᵀ`, row by row.
    pub lower: Vec<f64>,
}

/// Predicted one-step-ahead mean and covariance for every `t` in
/// `[start, end)`, each conditioned on the `T′` steps before it.
pub fn covariance_trace(model: &Model, panel: &TimeSeriesPanel, start: usize, end: usize) -> Result<Vec<CovarianceRow>> {
    if end > panel.len() || start >= end {
        return Err(Error::Data(format!(
            "covariance range [{start}, {end}) is empty or exceeds the panel length {}",
            panel.len()
        )));
    }
    let prepared = model.prepare(panel)?;
    let indices: Vec<usize> = (0..model.num_series()).collect();
    let mut buf = Vec::new();
    let mut rows = Vec::with_capacity(end - start);
    for t in start..end {
        if t < model.context_length {
            return Err(Error::Data(format!(
                "step {t} has fewer than {} context steps before it",
                model.context_length
            )));
        }
        let mut state = NetworkState::zeros(&model.params.shape, model.num_series());
        for step in t - model.context_length..=t {
            for (i, s) in state.series.iter_mut().enumerate() {
                prepared.input(i, step, &mut buf);
                s.advance(&model.params, &buf, i, step)?;
            }
        }
        let tops: Vec<&[f64]> = state.series.iter().map(|s| s.top()).collect();
        let g: LowRankGaussian = assemble(&model.params, &tops, &indices)?;
        let cov = g.covariance();
        let lower = (0..cov.rows()).flat_map(|a| (0..=a).map(move |b| (a, b))).map(|(a, b)| cov[(a, b)]).collect();
        rows.push(CovarianceRow {
            t,
            label: panel.timestamps().label(t),
            mu: g.mu().to_vec(),
            lower,
        });
    }
    Ok(rows)
}

/// Nearest-rank quantile of sorted samples: index `⌈αS⌉ − 1`.
pub fn nearest_rank(sorted: &[f64], alpha: f64) -> f64 {
    let s = sorted.len();
    let idx = ((alpha * s as f64).ceil() as usize).clamp(1, s) - 1;
    sorted[idx]
}

pub fn write_samples_to<W: Write>(fc: &ForecastSamples, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sample_id", "series_id", "step", "value"])?;
    for s in 0..fc.num_samples {
        for (i, id) in fc.series_ids.iter().enumerate() {
            for t in 0..fc.horizon {
                w.write_record([s.to_string(), id.clone(), t.to_string(), fc.get(s, i, t).to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples(fc: &ForecastSamples, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_samples_to(fc, w))
}

/// Reads a samples CSV. Series keep their order of first appearance.
pub fn read_samples_from<R: Read>(reader: R) -> Result<ForecastSamples> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != ["sample_id", "series_id", "step", "value"] {
        return Err(Error::Data(format!(
            "samples header must be sample_id,series_id,step,value, got {}",
            header.join(",")
        )));
    }
    let mut ids: Vec<String> = Vec::new();
    let mut lookup: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = line + 2;
        let field = |c: usize| rec.get(c).ok_or_else(|| Error::Data(format!("line {line}: missing column {}", c + 1)));
        let parse_idx = |c: usize| -> Result<usize> {
            field(c)?
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("line {line}, column {}: expected an integer", c + 1)))
        };
        let s = parse_idx(0)?;
        let id = field(1)?.to_string();
        let t = parse_idx(2)?;
        let v: f64 = field(3)?
            .trim()
            .parse()
            .map_err(|_| Error::Data(format!("line {line}, column 4: unparseable value")))?;
        let i = *lookup.entry(id.clone()).or_insert_with(|| {
            ids.push(id);
            ids.len() - 1
        });
        cells.push((s, i, t, v));
    }
    let num_samples = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let horizon = cells.iter().map(|c| c.2 + 1).max().unwrap_or(0);
    let n = ids.len();
    if cells.len() != num_samples * n * horizon {
        return Err(Error::Data(format!(
            "samples file has {} rows, expected S·N·τ = {}",
            cells.len(),
            num_samples * n * horizon
        )));
    }
    let mut data = vec![f64::NAN; cells.len()];
    for (s, i, t, v) in cells {
        data[(s * n + i) * horizon + t] = v;
    }
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("samples file has duplicate or missing (sample, series, step) cells".into()));
    }
    ForecastSamples::new(data, num_samples, n, horizon, ids)
}

pub fn read_samples(path: &Path) -> Result<ForecastSamples> {
    read_samples_from(std::fs::File::open(path)?)
}

pub fn write_quantiles_to<W: Write>(fc: &ForecastSamples, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["series_id".to_string(), "step".to_string()];
    header.extend(SUMMARY_LEVELS.iter().map(|a| format!("q{}", (a * 100.0).round())));
    w.write_record(&header)?;
    for (i, id) in fc.series_ids.iter().enumerate() {
        for t in 0..fc.horizon {
            let mut xs = fc.marginal(i, t);
            xs.sort_by(f64::total_cmp);
            let mut rec = vec![id.clone(), t.to_string()];
            rec.extend(SUMMARY_LEVELS.iter().map(|&a| nearest_rank(&xs, a).to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_quantiles(fc: &ForecastSamples, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_quantiles_to(fc, w))
}

/// Columns: `t`, `mu_<id>` per series, then `cov_<a>_<b>` for `b ≤ a`.
pub fn write_covariance_trace_to<W: Write>(rows: &[CovarianceRow], series_ids: &[String], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend(series_ids.iter().map(|id| format!("mu_{id}")));
    for a in 0..series_ids.len() {
        for b in 0..=a {
            header.push(format!("cov_{}_{}", series_ids[a], series_ids[b]));
        }
    }
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.label.clone()];
        rec.extend(row.mu.iter().chain(&row.lower).map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_covariance_trace(rows: &[CovarianceRow], series_ids: &[String], path: &Path) -> Result<()> {
    write_atomic(path, |w| write_covariance_trace_to(rows, series_ids, w))
}

/// Origins and files of a multi-window forecast run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastManifest {
    pub horizon: usize,
    pub num_samples: usize,
    pub seed: u64,
    pub frequency: Frequency,
    pub windows: Vec<ManifestWindow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestWindow {
    /// Index of the first forecast step in the panel.
    pub origin: usize,
    pub start_time: String,
    pub samples: String,
}
