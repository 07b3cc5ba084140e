//! Maximum-likelihood training: random slices over random subsets of
//! series, Adam with global-norm clipping, and plateau learning-rate decay.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::copula::{EmpiricalCdf, MarginalTransform};
use crate::data::{Domain, TimeSeriesPanel};
use crate::error::{Error, Result};
use crate::model::{Model, PreparedPanel, TransformKind};
use crate::net::{loss_and_grads, FeatureSpec, ModelShape, NetworkParams, Tape};

pub(crate) const STREAM_INIT: u64 = 0;
pub(crate) const STREAM_JITTER: u64 = 1;
pub(crate) const STREAM_SAMPLING: u64 = 2;
pub(crate) const STREAM_DROPOUT: u64 = 3;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn default_learning_rate() -> f64 {
    1e-3
}
fn default_batch_size() -> usize {
    16
}
fn default_total_updates() -> usize {
    10_000
}
fn default_clip_norm() -> f64 {
    10.0
}
fn default_l2() -> f64 {
    1e-8
}
fn default_decay_patience() -> usize {
    500
}
fn default_decay_factor() -> f64 {
    2.0
}
fn default_smoothing_window() -> usize {
    50
}
fn default_rank() -> usize {
    10
}
fn default_dim_batch() -> usize {
    20
}
fn default_ecdf_window() -> usize {
    100
}
fn default_num_eval_samples() -> usize {
    400
}
fn default_hidden() -> usize {
    40
}
fn default_layers() -> usize {
    2
}
fn default_embedding_dim() -> usize {
    4
}
fn default_dropout() -> f64 {
    0.01
}
fn default_horizon() -> usize {
    24
}

/// Training hyperparameters. Defaults follow the published setup:
/// Adam at 1e-3, 16 instances per update, 10 000 updates, clipping at 10,
/// L2 1e-8, halve the rate after 500 stale updates, rank 10, B = 20,
/// m = 100, 400 evaluation samples, 2 LSTM layers of 40 cells, dropout 0.01.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_total_updates")]
    pub total_updates: usize,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    #[serde(default = "default_l2")]
    pub l2: f64,
    #[serde(default = "default_decay_patience")]
    pub decay_patience: usize,
    #[serde(default = "default_decay_factor")]
    pub decay_factor: f64,
    /// Window of the running-average loss that decides "improvement".
    #[serde(default = "default_smoothing_window")]
    pub smoothing_window: usize,
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Number of series `B` scored jointly per training instance.
    #[serde(default = "default_dim_batch")]
    pub dim_batch: usize,
    /// Observations `m` behind each empirical CDF.
    #[serde(default = "default_ecdf_window")]
    pub ecdf_window: usize,
    #[serde(default = "default_num_eval_samples")]
    pub num_eval_samples: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    /// Feed the series embedding to the LSTM as well as to the heads.
    #[serde(default)]
    pub embedding_input: bool,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    /// Forecast horizon τ; the context length T′ equals it.
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub transform: TransformKind,
    /// ECDF jitter; by default 1.0 for count series and 0 for real ones.
    #[serde(default)]
    pub jitter: Option<f64>,
    /// Encode calendar features scaled to [0, 1) rather than raw indices.
    #[serde(default = "default_true")]
    pub scale_features: bool,
    /// Lag set override; defaults to the panel frequency's lags.
    #[serde(default)]
    pub lags: Option<Vec<usize>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn context_length(&self) -> usize {
        self.horizon
    }

    /// Slice length `T′ + τ`.
    pub fn window_len(&self) -> usize {
        self.context_length() + self.horizon
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("decay_factor", self.decay_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let counts = [
            ("batch_size", self.batch_size),
            ("decay_patience", self.decay_patience),
            ("smoothing_window", self.smoothing_window),
            ("rank", self.rank),
            ("dim_batch", self.dim_batch),
            ("num_eval_samples", self.num_eval_samples),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("horizon", self.horizon),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.decay_factor <= 1.0 {
            return Err(Error::Config(format!(
                "decay_factor must exceed 1, got {}",
                self.decay_factor
            )));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be nonnegative, got {}", self.l2)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if self.ecdf_window < 2 {
            return Err(Error::Config("ecdf_window must be at least 2".into()));
        }
        if let Some(j) = self.jitter {
            if !(j >= 0.0) {
                return Err(Error::Config(format!("jitter must be nonnegative, got {j}")));
            }
        }
        Ok(())
    }
}

/// One random slice of `T′ + τ` steps over `B` random series.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub series_indices: Vec<usize>,
    /// Absolute panel index of the first step.
    pub start: usize,
    /// `[member][step]` network inputs.
    pub inputs: Vec<Vec<Vec<f64>>>,
    /// `[step][member]` Gaussian-scale targets.
    pub targets: Vec<Vec<f64>>,
    /// `[step][member]` data-scale observations.
    pub observations: Vec<Vec<f64>>,
}

impl TrainingInstance {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Builds the instance for fixed series and start offset.
    pub fn from_panel(data: &PreparedPanel, series_indices: Vec<usize>, start: usize, window_len: usize) -> Result<Self> {
        if start + window_len > data.len() {
            return Err(Error::Data(format!(
                "slice [{start}, {}) exceeds panel length {}",
                start + window_len,
                data.len()
            )));
        }
        let mut buf = Vec::new();
        let inputs = series_indices
            .iter()
            .map(|&i| {
                (start..start + window_len)
                    .map(|t| {
                        data.input(i, t, &mut buf);
                        buf.clone()
                    })
                    .collect()
            })
            .collect();
        let targets = (start..start + window_len)
            .map(|t| series_indices.iter().map(|&i| data.transformed[(i, t)]).collect())
            .collect();
        let observations = (start..start + window_len)
            .map(|t| series_indices.iter().map(|&i| data.observed[(i, t)]).collect())
            .collect();
        Ok(TrainingInstance {
            series_indices,
            start,
            inputs,
            targets,
            observations,
        })
    }
}

/// Uniform start offset and `min(B, N)` distinct series drawn uniformly
/// without replacement.
pub fn sample_training_instance<R: Rng + ?Sized>(
    data: &PreparedPanel,
    window_len: usize,
    dim_batch: usize,
    rng: &mut R,
) -> Result<TrainingInstance> {
    let t = data.len();
    if t < window_len {
        return Err(Error::Data(format!(
            "panel has {t} steps but training slices need {window_len} (context + horizon)"
        )));
    }
    let start = rng.random_range(0..=t - window_len);
    let n = data.num_series();
    let series = if n <= dim_batch {
        (0..n).collect()
    } else {
        index::sample(rng, n, dim_batch).into_vec()
    };
    TrainingInstance::from_panel(data, series, start, window_len)
}

/// First and second moment estimates of Adam, one buffer per tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u32,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &NetworkParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }
}

/// Clips `grads` to global norm `clip_norm`, adds `l2·θ`, and applies one
/// bias-corrected Adam step at `learning_rate`. Returns the gradient norm
/// after clipping.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &mut NetworkParams,
    state: &mut AdamState,
    learning_rate: f64,
    clip_norm: f64,
    l2: f64,
) -> Result<f64> {
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient",
            series: 0,
            step: state.t as usize,
        });
    }
    let applied = if norm > clip_norm {
        grads.scale(clip_norm / norm);
        clip_norm
    } else {
        norm
    };
    state.t += 1;
    let bc1 = 1.0 - AdamState::BETA1.powi(state.t as i32);
    let bc2 = 1.0 - AdamState::BETA2.powi(state.t as i32);
    let grad_slices: Vec<&[f64]> = grads.tensors().into_iter().map(|t| t.data).collect();
    for (((theta, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(grad_slices)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for e in 0..theta.len() {
            let ge = g[e] + l2 * theta[e];
            m[e] = AdamState::BETA1 * m[e] + (1.0 - AdamState::BETA1) * ge;
            v[e] = AdamState::BETA2 * v[e] + (1.0 - AdamState::BETA2) * ge * ge;
            let m_hat = m[e] / bc1;
            let v_hat = v[e] / bc2;
            theta[e] -= learning_rate * m_hat / (v_hat.sqrt() + AdamState::EPS);
        }
    }
    Ok(applied)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub update_index: usize,
    pub loss: f64,
    pub learning_rate: f64,
}

/// Halves (by `factor`) the learning rate after `patience` consecutive
/// updates whose running-average loss is not strictly below the best.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    window: usize,
    recent: std::collections::VecDeque<f64>,
    recent_sum: f64,
    best: f64,
    stale: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize, window: usize) -> Self {
        PlateauSchedule {
            lr,
            factor,
            patience,
            window,
            recent: std::collections::VecDeque::with_capacity(window),
            recent_sum: 0.0,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn stale(&self) -> usize {
        self.stale
    }

    /// Records the loss of the update just taken.
    pub fn observe(&mut self, loss: f64) {
        if self.recent.len() == self.window {
            self.recent_sum -= self.recent.pop_front().expect("non-empty window");
        }
        self.recent.push_back(loss);
        self.recent_sum += loss;
        let smoothed = self.recent_sum / self.recent.len() as f64;
        if smoothed < self.best {
            self.best = smoothed;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                self.lr /= self.factor;
                self.stale = 0;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: Model,
    pub trace: Vec<TraceRow>,
}

/// Fits the marginal transforms on the training panel.
pub fn fit_transforms(panel: &TimeSeriesPanel, cfg: &TrainConfig) -> Result<Vec<MarginalTransform>> {
    let mut rng = stream_rng(cfg.seed, STREAM_JITTER);
    (0..panel.num_series())
        .map(|i| {
            let values = panel.series(i);
            match cfg.transform {
                TransformKind::Ecdf => {
                    let jitter = cfg.jitter.unwrap_or(match panel.domains()[i] {
                        Domain::Count => 1.0,
                        Domain::Real => 0.0,
                    });
                    EmpiricalCdf::fit(values, cfg.ecdf_window, jitter, &mut rng)
                        .map(MarginalTransform::Ecdf)
                        .map_err(|e| Error::Data(format!("series {}: {e}", panel.series_ids()[i])))
                }
                TransformKind::Standardize => MarginalTransform::standardize(values, values.len()),
                TransformKind::Identity => Ok(MarginalTransform::identity()),
            }
        })
        .collect()
}

/// Transforms, feature layout, and freshly initialized weights for `panel`.
pub fn init_model(panel: &TimeSeriesPanel, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    let transforms = fit_transforms(panel, cfg)?;
    let covariate_width = crate::data::build_covariates(panel.timestamps(), panel.frequency(), cfg.scale_features)
        .first()
        .map_or(0, Vec::len);
    let lags = cfg.lags.clone().unwrap_or_else(|| panel.frequency().lags().to_vec());
    let features = FeatureSpec::new(&lags, covariate_width);
    let shape = ModelShape {
        input_width: features.input_width(),
        hidden: cfg.hidden,
        layers: cfg.layers,
        rank: cfg.rank,
        embedding_dim: cfg.embedding_dim,
        num_series: panel.num_series(),
        embedding_input: cfg.embedding_input,
    };
    let params = NetworkParams::init(shape, cfg.dropout, &mut stream_rng(cfg.seed, STREAM_INIT))?;
    Ok(Model {
        params,
        transforms,
        features,
        frequency: panel.frequency(),
        scale_features: cfg.scale_features,
        context_length: cfg.context_length(),
        horizon: cfg.horizon,
        series_ids: panel.series_ids().to_vec(),
    })
}

/// Runs `total_updates` Adam updates of `batch_size` instances each and
/// returns the model with its per-update loss trace. The recorded loss is
/// the negative log-likelihood per time step and series.
pub fn fit(panel: &TimeSeriesPanel, cfg: &TrainConfig) -> Result<FitResult> {
    fit_with_callback(panel, cfg, |_, _| Ok(()))
}

/// [`fit`] with a hook called after every update (e.g. for checkpoints).
pub fn fit_with_callback<F>(panel: &TimeSeriesPanel, cfg: &TrainConfig, mut on_update: F) -> Result<FitResult>
where
    F: FnMut(usize, &Model) -> Result<()>,
{
    let mut model = init_model(panel, cfg)?;
    let window_len = cfg.window_len();
    if panel.len() < window_len {
        return Err(Error::Data(format!(
            "panel has {} steps but training slices need {window_len} (context + horizon)",
            panel.len()
        )));
    }
    let data = model.prepare(panel)?;
    let mut sampling_rng = stream_rng(cfg.seed, STREAM_SAMPLING);
    let mut dropout_rng = stream_rng(cfg.seed, STREAM_DROPOUT);
    let mut adam = AdamState::new(&model.params);
    let mut schedule = PlateauSchedule::new(cfg.learning_rate, cfg.decay_factor, cfg.decay_patience, cfg.smoothing_window);
    let mut trace = Vec::with_capacity(cfg.total_updates);

    for update in 0..cfg.total_updates {
        let mut grads = model.params.zeros_like();
        let mut loss = 0.0;
        for _ in 0..cfg.batch_size {
            let inst = sample_training_instance(&data, window_len, cfg.dim_batch, &mut sampling_rng)?;
            let cells = (inst.len() * inst.series_indices.len()) as f64;
            let out = loss_and_grads(&model.params, &inst, &model.transforms, Some(&mut dropout_rng))
                .map_err(|e| wrap_update(e, update))?;
            let weight = 1.0 / (cells * cfg.batch_size as f64);
            grads.add_scaled(&out.grads, weight);
            loss += out.loss * weight;
        }
        if !loss.is_finite() {
            return Err(Error::Divergence { update, loss });
        }
        let lr = schedule.learning_rate();
        adam_step(&mut model.params, &mut grads, &mut adam, lr, cfg.clip_norm, cfg.l2)
            .map_err(|e| wrap_update(e, update))?;
        trace.push(TraceRow {
            update_index: update,
            loss,
            learning_rate: lr,
        });
        schedule.observe(loss);
        on_update(update, &model)?;
    }
    Ok(FitResult { model, trace })
}

/// Mean per-step, per-series Gaussian NLL of `model` over `count` instances
/// drawn from `panel` with `seed`, without dropout. The draws depend only on
/// the seed and the panel, so different models are scored on the same slices.
pub fn mean_nll(model: &Model, panel: &TimeSeriesPanel, cfg: &TrainConfig, count: usize, seed: u64) -> Result<f64> {
    let data = model.prepare(panel)?;
    let mut rng = stream_rng(seed, STREAM_SAMPLING);
    let mut total = 0.0;
    for _ in 0..count {
        let inst = sample_training_instance(&data, cfg.window_len(), cfg.dim_batch, &mut rng)?;
        let cells = (inst.len() * inst.series_indices.len()) as f64;
        total += Tape::record::<ChaCha8Rng>(&model.params, &inst, None)?.gaussian_nll() / cells;
    }
    Ok(total / count as f64)
}

fn wrap_update(e: Error, update: usize) -> Error {
    Error::AtUpdate {
        update,
        source: Box::new(e),
    }
}
