//! Command-line front end: synth, train, forecast, evaluate, gradcheck, bench.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::bench;
use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::{read_panel, rolling_windows, write_atomic, write_panel, Frequency, TimeSeriesPanel, Window};
use crate::error::{Error, Result};
use crate::forecasting::{
    covariance_trace, forecast, read_samples, write_covariance_trace, write_quantiles, write_samples, ForecastManifest,
    ManifestWindow,
};
use crate::linalg::Matrix;
use crate::metrics::{evaluate, MetricsReport};
use crate::model::Model;
use crate::net::{gradcheck_fixture, gradient_check};
use crate::synthetic::{generate, write_truth};
use crate::training::{fit_with_callback, init_model, TraceRow};

#[derive(Debug, Parser)]
#[command(
    name = "gpcopula",
    version,
    about = "Low-rank Gaussian-copula process forecasting",
    long_about = "Low-rank Gaussian-copula process forecasting for high-dimensional multivariate time series.\n\n\
Defaults follow the published hyperparameters: Adam with learning rate 1e-3, 16 instances per \
update, 10000 updates, gradient clipping at 10, L2 1e-8, learning rate halved after 500 updates \
without improvement, rank 10, 20 series per instance, ECDFs on the last 100 observations, \
2 LSTM layers of 40 cells, dropout 0.01, and 400 evaluation samples."
)]
pub struct Cli {
    #[command(flatten)]
    pub overrides: Overrides,
    #[command(subcommand)]
    pub command: Command,
}

/// Settings that win over the `--config` file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for data generation, training and sampling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Covariance rank r [default: 10].
    #[arg(long, global = true)]
    pub rank: Option<usize>,
    /// Monte Carlo sample paths per forecast [default: 400].
    #[arg(long, global = true)]
    pub num_eval_samples: Option<usize>,
    /// Forecast horizon τ; the context length equals it [default: 24].
    #[arg(long, global = true)]
    pub horizon: Option<usize>,
    /// Number of rolling evaluation windows [default: 1].
    #[arg(long, global = true)]
    pub windows: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the rank-2 synthetic panel and its ground truth.
    Synth {
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Number of series [default: 4].
        #[arg(long)]
        num_series: Option<usize>,
        /// Number of time steps [default: 24000].
        #[arg(long)]
        length: Option<usize>,
    },
    /// Fit a model on the panel before the first evaluation window.
    Train {
        #[arg(long, value_name = "PATH")]
        panel: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Panel frequency: 30min, hourly or daily [default: hourly].
        #[arg(long)]
        frequency: Option<Frequency>,
        /// Total gradient updates [default: 10000].
        #[arg(long)]
        updates: Option<usize>,
        /// Also write the checkpoint every K updates.
        #[arg(long, value_name = "K")]
        checkpoint_every: Option<usize>,
    },
    /// Sample joint forecasts at every evaluation window.
    Forecast {
        #[arg(long, value_name = "PATH")]
        panel: PathBuf,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Also write the one-step predicted mean and covariance trace.
        #[arg(long)]
        covariance_trace: bool,
    },
    /// Score forecasts against the panel: CRPS, CRPS-Sum, MSE, MSE-Sum.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        panel: PathBuf,
        /// Directory holding the forecast manifest and sample files.
        #[arg(long, value_name = "DIR")]
        forecast_dir: PathBuf,
        /// Metrics JSON path [default: <forecast-dir>/metrics.json].
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Compare analytic gradients with central finite differences.
    Gradcheck {
        /// Perturb one analytic gradient entry; the check must then fail.
        #[arg(long)]
        corrupt: bool,
    },
    /// Time log-density scaling in N and rollout scaling in S.
    Bench {
        /// Write the timing table as JSON.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

impl Overrides {
    /// Reads `--config` (or defaults) and applies the flag overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.synthetic.seed = seed;
            cfg.gradcheck.seed = seed;
        }
        if let Some(r) = self.rank {
            cfg.train.rank = r;
        }
        if let Some(s) = self.num_eval_samples {
            cfg.train.num_eval_samples = s;
        }
        if let Some(h) = self.horizon {
            cfg.train.horizon = h;
        }
        if let Some(w) = self.windows {
            cfg.forecast.windows = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    let mut cfg = cli.overrides.resolve()?;
    match &cli.command {
        Command::Synth {
            out_dir,
            num_series,
            length,
        } => {
            if let Some(n) = num_series {
                cfg.synthetic.num_series = *n;
            }
            if let Some(t) = length {
                cfg.synthetic.length = *t;
            }
            cmd_synth(&cfg, out_dir)?;
        }
        Command::Train {
            panel,
            out_dir,
            frequency,
            updates,
            checkpoint_every,
        } => {
            if let Some(f) = frequency {
                cfg.data.frequency = *f;
            }
            if let Some(u) = updates {
                cfg.train.total_updates = *u;
            }
            cmd_train(&cfg, panel, out_dir, *checkpoint_every)?;
        }
        Command::Forecast {
            panel,
            checkpoint,
            out_dir,
            covariance_trace,
        } => {
            cfg.forecast.covariance_trace |= *covariance_trace;
            cmd_forecast(&cfg, cli.overrides.horizon, panel, checkpoint, out_dir)?;
        }
        Command::Evaluate {
            panel,
            forecast_dir,
            out,
        } => {
            let out = out.clone().unwrap_or_else(|| forecast_dir.join(&cfg.paths.metrics));
            let report = cmd_evaluate(&cfg, panel, forecast_dir, &out)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Gradcheck { corrupt } => {
            let report = cmd_gradcheck(&cfg, *corrupt)?;
            for (name, err) in &report.tensors {
                println!("{name:<16} {err:.3e}");
            }
            println!(
                "worst relative error {:.3e} (tolerance {:.0e}): {}",
                report.worst,
                report.tolerance,
                if report.passed { "PASS" } else { "FAIL" }
            );
            if !report.passed {
                return Ok(4);
            }
        }
        Command::Bench { out } => {
            let report = cmd_bench(&cfg)?;
            print_bench(&report);
            if let Some(path) = out {
                write_atomic(path, |w| Ok(serde_json::to_writer_pretty(w, &report)?))?;
            }
        }
    }
    Ok(0)
}

pub fn cmd_synth(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let data = generate(&cfg.synthetic)?;
    write_panel(&data.panel, &out_dir.join(&cfg.paths.panel))?;
    write_truth(&data.truth, data.panel.series_ids(), &out_dir.join(&cfg.paths.truth))?;
    Ok(())
}

/// Evaluation windows of `panel` under `cfg`.
pub fn windows_for(cfg: &RunConfig, len: usize, horizon: usize) -> Result<Vec<Window>> {
    let stride = cfg.forecast.stride.unwrap_or(horizon);
    rolling_windows(len, horizon, cfg.forecast.windows, stride)
}

pub fn cmd_train(cfg: &RunConfig, panel_path: &Path, out_dir: &Path, checkpoint_every: Option<usize>) -> Result<Vec<TraceRow>> {
    let panel = read_panel(panel_path, cfg.data.frequency)?;
    let windows = windows_for(cfg, panel.len(), cfg.train.horizon)?;
    let train = panel.truncate(windows[0].train_end)?;
    if train.len() < cfg.train.window_len() {
        return Err(Error::Data(format!(
            "training range has {} steps but slices need {} (context + horizon)",
            train.len(),
            cfg.train.window_len()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let ck_path = out_dir.join(&cfg.paths.checkpoint);
    let result = fit_with_callback(&train, &cfg.train, |update, model| {
        match checkpoint_every {
            Some(k) if k > 0 && (update + 1) % k == 0 => checkpoint::save(model, Some(&cfg.train), &ck_path),
            _ => Ok(()),
        }
    })?;
    checkpoint::save(&result.model, Some(&cfg.train), &ck_path)?;
    write_trace(&result.trace, &out_dir.join(&cfg.paths.loss_trace))?;
    Ok(result.trace)
}

pub fn write_trace(trace: &[TraceRow], path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["update_index", "loss", "learning_rate"])?;
        for row in trace {
            csv.write_record([row.update_index.to_string(), row.loss.to_string(), row.learning_rate.to_string()])?;
        }
        csv.flush()?;
        Ok(())
    })
}

pub fn cmd_forecast(
    cfg: &RunConfig,
    horizon_override: Option<usize>,
    panel_path: &Path,
    checkpoint_path: &Path,
    out_dir: &Path,
) -> Result<ForecastManifest> {
    let (model, _) = checkpoint::load(checkpoint_path)?;
    let panel = read_panel(panel_path, model.frequency)?;
    check_series(&model, &panel)?;
    let horizon = horizon_override.unwrap_or(model.horizon);
    let windows = windows_for(cfg, panel.len(), horizon)?;
    let num_samples = cfg.train.num_eval_samples;
    let seed = cfg.train.seed;
    std::fs::create_dir_all(out_dir)?;
    let mut manifest = ForecastManifest {
        horizon,
        num_samples,
        seed,
        frequency: model.frequency,
        windows: Vec::with_capacity(windows.len()),
    };
    for (k, w) in windows.iter().enumerate() {
        let fc = forecast(&model, &panel, w.train_end, horizon, num_samples, seed)?;
        let name = format!("samples_w{k}.csv");
        write_samples(&fc, &out_dir.join(&name))?;
        if cfg.forecast.quantiles {
            write_quantiles(&fc, &out_dir.join(format!("quantiles_w{k}.csv")))?;
        }
        manifest.windows.push(ManifestWindow {
            origin: w.train_end,
            start_time: fc.start_time.clone().unwrap_or_default(),
            samples: name,
        });
    }
    if cfg.forecast.covariance_trace {
        let rows = covariance_trace(&model, &panel, windows[0].train_end, panel.len())?;
        write_covariance_trace(&rows, &model.series_ids, &out_dir.join("covariance_trace.csv"))?;
    }
    write_atomic(&out_dir.join(&cfg.paths.manifest), |w| {
        Ok(serde_json::to_writer_pretty(w, &manifest)?)
    })?;
    Ok(manifest)
}

fn check_series(model: &Model, panel: &TimeSeriesPanel) -> Result<()> {
    if model.series_ids != panel.series_ids() {
        return Err(Error::Data(format!(
            "panel series {:?} differ from the model's {:?}",
            panel.series_ids(),
            model.series_ids
        )));
    }
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig, panel_path: &Path, forecast_dir: &Path, out: &Path) -> Result<MetricsReport> {
    let manifest_path = forecast_dir.join(&cfg.paths.manifest);
    let text = std::fs::read_to_string(&manifest_path)
        .map_err(|e| Error::Data(format!("cannot read forecast manifest {}: {e}", manifest_path.display())))?;
    let manifest: ForecastManifest = serde_json::from_str(&text)?;
    let panel = read_panel(panel_path, manifest.frequency)?;
    let mut windows = Vec::with_capacity(manifest.windows.len());
    for w in &manifest.windows {
        let fc = read_samples(&forecast_dir.join(&w.samples))?;
        if fc.series_ids != panel.series_ids() {
            return Err(Error::Data(format!("{} covers different series than the panel", w.samples)));
        }
        let end = w.origin + fc.horizon();
        if end > panel.len() {
            return Err(Error::Data(format!(
                "window at {} needs actuals through step {end}, panel has {}",
                w.origin,
                panel.len()
            )));
        }
        let actuals = Matrix::from_fn(panel.num_series(), fc.horizon(), |i, t| panel.values()[(i, w.origin + t)]);
        windows.push((fc, actuals));
    }
    let report = evaluate(&windows, cfg.metrics.levels)?;
    write_atomic(out, |w| Ok(serde_json::to_writer_pretty(w, &report)?))?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub tensors: Vec<(String, f64)>,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn cmd_gradcheck(cfg: &RunConfig, corrupt: bool) -> Result<GradcheckReport> {
    let (params, inst) = gradcheck_fixture(cfg.gradcheck.seed)?;
    let tensors = gradient_check(&params, &inst, cfg.gradcheck.step, corrupt)?;
    let worst = tensors.iter().map(|t| t.1).fold(0.0, f64::max);
    Ok(GradcheckReport {
        passed: worst <= cfg.gradcheck.tolerance,
        tensors,
        worst,
        tolerance: cfg.gradcheck.tolerance,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub logpdf: Vec<bench::LogpdfTiming>,
    pub dense_n: usize,
    pub dense_seconds: f64,
    /// Dense time cubically extrapolated to the largest N, over low-rank time there.
    pub extrapolated_speedup: f64,
    pub rollout: Vec<bench::RolloutTiming>,
}

pub const BENCH_DIMS: [usize; 3] = [1024, 2048, 4096];
pub const BENCH_SAMPLES: [usize; 3] = [100, 200, 400];

pub fn cmd_bench(cfg: &RunConfig) -> Result<BenchReport> {
    let rank = 10;
    let logpdf = bench::logpdf_scaling(&BENCH_DIMS, rank, cfg.train.seed)?;
    let dense_n = 512;
    let dense_seconds = bench::dense_timing(dense_n, rank, cfg.train.seed)?;
    let largest = logpdf.last().expect("non-empty dims");
    let extrapolated = dense_seconds * (largest.n as f64 / dense_n as f64).powi(3);
    let rollout = rollout_bench(cfg, &BENCH_SAMPLES)?;
    Ok(BenchReport {
        extrapolated_speedup: extrapolated / largest.seconds,
        logpdf,
        dense_n,
        dense_seconds,
        rollout,
    })
}

/// Rollout timings on a freshly initialized model of the synthetic panel.
pub fn rollout_bench(cfg: &RunConfig, sample_counts: &[usize]) -> Result<Vec<bench::RolloutTiming>> {
    let mut spec = cfg.synthetic.clone();
    spec.length = spec.length.min(2000);
    let data = generate(&spec)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.transform = crate::model::TransformKind::Standardize;
    let model = init_model(&data.panel, &train_cfg)?;
    bench::rollout_scaling(
        &model,
        &data.panel,
        data.panel.len(),
        train_cfg.horizon,
        sample_counts,
        cfg.train.seed,
    )
}

fn print_bench(report: &BenchReport) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:>8} {:>6} {:>14} {:>8}", "N", "rank", "seconds", "ratio");
    for row in &report.logpdf {
        let ratio = row.ratio.map_or("-".to_string(), |r| format!("{r:.3}"));
        let _ = writeln!(out, "{:>8} {:>6} {:>14.3e} {:>8}", row.n, row.rank, row.seconds, ratio);
    }
    let _ = writeln!(
        out,
        "dense N={} {:.3e} s; extrapolated speedup at N={} {:.1}x",
        report.dense_n,
        report.dense_seconds,
        report.logpdf.last().map_or(0, |r| r.n),
        report.extrapolated_speedup
    );
    let _ = writeln!(out, "{:>8} {:>14} {:>8}", "samples", "seconds", "ratio");
    for row in &report.rollout {
        let _ = writeln!(out, "{:>8} {:>14.3e} {:>8.3}", row.samples, row.seconds, row.ratio);
    }
}
