//! Panel ingestion, covariates, and rolling evaluation windows.
//!
//! Panel CSV layout: a header `timestamp,<id1>,<id2>,...` followed by one row
//! per time step. Timestamps are either ISO-8601 date-times (calendar mode)
//! or consecutive integers (index mode, which disables calendar features).

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%d %H:%M:%S";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frequency {
    #[serde(rename = "30min")]
    ThirtyMinutes,
    #[serde(rename = "hourly")]
    Hourly,
    #[serde(rename = "daily")]
    Daily,
}

impl Frequency {
    pub fn step(self) -> TimeDelta {
        match self {
            Frequency::ThirtyMinutes => TimeDelta::minutes(30),
            Frequency::Hourly => TimeDelta::hours(1),
            Frequency::Daily => TimeDelta::days(1),
        }
    }

    /// Lagged values fed to the network alongside the previous value.
    pub fn lags(self) -> &'static [usize] {
        match self {
            Frequency::ThirtyMinutes => &[1, 2, 4, 12, 24, 48],
            Frequency::Hourly => &[1, 24, 168],
            Frequency::Daily => &[1, 7, 14],
        }
    }

    /// Number of calendar features for date-time panels.
    pub fn calendar_width(self) -> usize {
        match self {
            Frequency::ThirtyMinutes | Frequency::Hourly => 3,
            Frequency::Daily => 1,
        }
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Frequency::ThirtyMinutes => "30min",
            Frequency::Hourly => "hourly",
            Frequency::Daily => "daily",
        })
    }
}

impl std::str::FromStr for Frequency {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "30min" => Ok(Frequency::ThirtyMinutes),
            "hourly" | "1h" | "H" => Ok(Frequency::Hourly),
            "daily" | "1d" | "D" => Ok(Frequency::Daily),
            other => Err(Error::Config(format!(
                "unknown frequency {other:?} (expected 30min, hourly or daily)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Real,
    Count,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Timestamps {
    Calendar(Vec<NaiveDateTime>),
    Index(Vec<i64>),
}

impl Timestamps {
    pub fn len(&self) -> usize {
        match self {
            Timestamps::Calendar(ts) => ts.len(),
            Timestamps::Index(ts) => ts.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn label(&self, t: usize) -> String {
        match self {
            Timestamps::Calendar(ts) => ts[t].format(TIMESTAMP_FORMAT).to_string(),
            Timestamps::Index(ts) => ts[t].to_string(),
        }
    }

    /// Timestamps extended `extra` steps past the end at `frequency`.
    pub fn extend(&self, extra: usize, frequency: Frequency) -> Timestamps {
        match self {
            Timestamps::Calendar(ts) => {
                let mut out = ts.clone();
                let mut last = *ts.last().expect("non-empty timestamps");
                for _ in 0..extra {
                    last += frequency.step();
                    out.push(last);
                }
                Timestamps::Calendar(out)
            }
            Timestamps::Index(ts) => {
                let mut out = ts.clone();
                let last = *ts.last().expect("non-empty timestamps");
                out.extend((1..=extra as i64).map(|k| last + k));
                Timestamps::Index(out)
            }
        }
    }

    fn slice(&self, start: usize, end: usize) -> Timestamps {
        match self {
            Timestamps::Calendar(ts) => Timestamps::Calendar(ts[start..end].to_vec()),
            Timestamps::Index(ts) => Timestamps::Index(ts[start..end].to_vec()),
        }
    }
}

/// N×T observation matrix with per-series metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    values: Matrix,
    series_ids: Vec<String>,
    timestamps: Timestamps,
    frequency: Frequency,
    domains: Vec<Domain>,
}

impl TimeSeriesPanel {
    pub fn new(
        values: Matrix,
        series_ids: Vec<String>,
        timestamps: Timestamps,
        frequency: Frequency,
    ) -> Result<Self> {
        if values.rows() != series_ids.len() {
            return Err(Error::Data(format!(
                "{} series ids for {} series",
                series_ids.len(),
                values.rows()
            )));
        }
        if values.cols() != timestamps.len() {
            return Err(Error::Data(format!(
                "{} timestamps for {} observations per series",
                timestamps.len(),
                values.cols()
            )));
        }
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::Data("panel is empty".into()));
        }
        if let Some(pos) = values.as_slice().iter().position(|v| !v.is_finite()) {
            let t = values.cols();
            return Err(Error::Data(format!(
                "non-finite value in series {} at step {}",
                series_ids[pos / t],
                pos % t
            )));
        }
        let domains = values.iter_rows().map(infer_domain).collect();
        Ok(TimeSeriesPanel {
            values,
            series_ids,
            timestamps,
            frequency,
            domains,
        })
    }

    pub fn num_series(&self) -> usize {
        self.values.rows()
    }

    pub fn len(&self) -> usize {
        self.values.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn series(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn series_ids(&self) -> &[String] {
        &self.series_ids
    }

    pub fn timestamps(&self) -> &Timestamps {
        &self.timestamps
    }

    pub fn frequency(&self) -> Frequency {
        self.frequency
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn set_domains(&mut self, domains: Vec<Domain>) -> Result<()> {
        if domains.len() != self.num_series() {
            return Err(Error::Dimension {
                expected: self.num_series(),
                got: domains.len(),
            });
        }
        self.domains = domains;
        Ok(())
    }

    /// The first `end` time steps.
    pub fn truncate(&self, end: usize) -> Result<TimeSeriesPanel> {
        if end == 0 || end > self.len() {
            return Err(Error::Data(format!(
                "cannot truncate a panel of length {} to {end}",
                self.len()
            )));
        }
        let values = Matrix::from_fn(self.num_series(), end, |i, t| self.values[(i, t)]);
        Ok(TimeSeriesPanel {
            values,
            series_ids: self.series_ids.clone(),
            timestamps: self.timestamps.slice(0, end),
            frequency: self.frequency,
            domains: self.domains.clone(),
        })
    }
}

fn infer_domain(series: &[f64]) -> Domain {
    if series.iter().all(|&v| v >= 0.0 && v.fract() == 0.0) {
        Domain::Count
    } else {
        Domain::Real
    }
}

fn parse_datetime(s: &str) -> Option<NaiveDateTime> {
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%dT%H:%M"] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(ts);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
}

pub fn read_panel(path: &Path, frequency: Frequency) -> Result<TimeSeriesPanel> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open panel {}: {e}", path.display())))?;
    read_panel_from(file, frequency)
}

pub fn read_panel_from<R: Read>(reader: R, frequency: Frequency) -> Result<TimeSeriesPanel> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Data(format!("unreadable header: {e}")))?
        .clone();
    if header.len() < 2 {
        return Err(Error::Data(
            "header must contain a timestamp column and at least one series".into(),
        ));
    }
    let series_ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let n = series_ids.len();

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut labels: Vec<String> = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        // line 1 is the header
        let line = row + 2;
        let record = record.map_err(|e| Error::Data(format!("line {line}: {e}")))?;
        if record.len() != n + 1 {
            return Err(Error::Data(format!(
                "line {line}: ragged row with {} fields, expected {}",
                record.len(),
                n + 1
            )));
        }
        labels.push(record[0].to_owned());
        for (j, field) in record.iter().skip(1).enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                Error::Data(format!(
                    "line {line}, column {:?}: cannot parse {field:?} as a number",
                    series_ids[j]
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "line {line}, column {:?}: non-finite value {field:?}",
                    series_ids[j]
                )));
            }
            columns[j].push(value);
        }
    }
    if labels.is_empty() {
        return Err(Error::Data("panel has no rows".into()));
    }
    let timestamps = parse_timestamps(&labels, frequency)?;
    let t = labels.len();
    let values = Matrix::from_fn(n, t, |i, s| columns[i][s]);
    TimeSeriesPanel::new(values, series_ids, timestamps, frequency)
}

fn parse_timestamps(labels: &[String], frequency: Frequency) -> Result<Timestamps> {
    if labels[0].parse::<i64>().is_ok() {
        let mut out = Vec::with_capacity(labels.len());
        for (row, label) in labels.iter().enumerate() {
            let line = row + 2;
            let t: i64 = label.parse().map_err(|_| {
                Error::Data(format!("line {line}: expected integer timestamp, got {label:?}"))
            })?;
            if let Some(&prev) = out.last() {
                if t <= prev {
                    return Err(Error::Data(format!(
                        "line {line}: timestamp {t} is not after {prev}"
                    )));
                }
                if t != prev + 1 {
                    return Err(Error::Data(format!(
                        "line {line}: gap in timestamps, expected {}",
                        prev + 1
                    )));
                }
            }
            out.push(t);
        }
        return Ok(Timestamps::Index(out));
    }
    let step = frequency.step();
    let mut out: Vec<NaiveDateTime> = Vec::with_capacity(labels.len());
    for (row, label) in labels.iter().enumerate() {
        let line = row + 2;
        let ts = parse_datetime(label).ok_or_else(|| {
            Error::Data(format!("line {line}: cannot parse timestamp {label:?}"))
        })?;
        if let Some(&prev) = out.last() {
            if ts <= prev {
                return Err(Error::Data(format!(
                    "line {line}: timestamp {label} is not after {}",
                    prev.format(TIMESTAMP_FORMAT)
                )));
            }
            let expected = prev + step;
            if ts != expected {
                return Err(Error::Data(format!(
                    "line {line}: gap in timestamps, expected {} but found {label}",
                    expected.format(TIMESTAMP_FORMAT)
                )));
            }
        }
        out.push(ts);
    }
    Ok(Timestamps::Calendar(out))
}

pub fn write_panel_to<W: Write>(panel: &TimeSeriesPanel, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["timestamp".to_owned()];
    header.extend(panel.series_ids.iter().cloned());
    wtr.write_record(&header)?;
    for t in 0..panel.len() {
        let mut record = vec![panel.timestamps.label(t)];
        record.extend((0..panel.num_series()).map(|i| panel.values[(i, t)].to_string()));
        wtr.write_record(&record)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_panel(panel: &TimeSeriesPanel, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_panel_to(panel, w))
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub(crate) fn write_atomic<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut std::io::BufWriter<&mut std::fs::File>) -> Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    {
        let mut w = std::io::BufWriter::new(tmp.as_file_mut());
        body(&mut w)?;
        w.flush()?;
    }
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Per-step calendar features. Each feature is one number: with `scaled`
/// the zero-based index divided by its period (e.g. hour 13 → 13/24),
/// otherwise the raw index. Index-mode timestamps yield no features.
pub fn build_covariates(timestamps: &Timestamps, frequency: Frequency, scaled: bool) -> Vec<Vec<f64>> {
    let ts = match timestamps {
        Timestamps::Calendar(ts) => ts,
        Timestamps::Index(ts) => return vec![Vec::new(); ts.len()],
    };
    let enc = |value: u32, period: f64| {
        if scaled {
            value as f64 / period
        } else {
            value as f64
        }
    };
    ts.iter()
        .map(|t| {
            let dow = t.weekday().num_days_from_monday();
            match frequency {
                Frequency::Hourly => vec![enc(t.hour(), 24.0), enc(dow, 7.0), enc(t.day0(), 31.0)],
                Frequency::Daily => vec![enc(dow, 7.0)],
                Frequency::ThirtyMinutes => {
                    vec![enc(t.minute(), 60.0), enc(t.hour(), 24.0), enc(dow, 7.0)]
                }
            }
        })
        .collect()
}

/// A forecast origin: train on `[0, train_end)`, evaluate `[train_end, eval_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub train_end: usize,
    pub eval_end: usize,
}

/// `num_windows` evaluation windows of length `horizon`, `stride` apart, the
/// last one ending at `len`.
pub fn rolling_windows(len: usize, horizon: usize, num_windows: usize, stride: usize) -> Result<Vec<Window>> {
    if horizon == 0 || num_windows == 0 {
        return Err(Error::Config("horizon and number of windows must be positive".into()));
    }
    if stride < horizon {
        return Err(Error::Config(format!(
            "window stride {stride} is shorter than the horizon {horizon}; forecasts would overlap"
        )));
    }
    let span = horizon + (num_windows - 1) * stride;
    if span >= len {
        return Err(Error::Data(format!(
            "{num_windows} windows of horizon {horizon} with stride {stride} need more than {len} steps"
        )));
    }
    Ok((0..num_windows)
        .map(|k| {
            let train_end = len - horizon - (num_windows - 1 - k) * stride;
            Window {
                train_end,
                eval_end: train_end + horizon,
            }
        })
        .collect())
}
