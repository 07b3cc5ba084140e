//! Forward recording and reverse-mode gradients of the training loss.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::copula::MarginalTransform;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::lowrank::{nll_with_gradient, EmissionGradient, LowRankGaussian};
use crate::training::TrainingInstance;

use super::lstm::gate_activations;
use super::params::NetworkParams;

struct StepCache {
    input: Vec<f64>,
    /// Activated gates `[i, f, g, o]`.
    gates: Vec<f64>,
    c_prev: Vec<f64>,
    c: Vec<f64>,
    h_prev: Vec<f64>,
    /// Inverted-dropout multipliers on this layer's output.
    mask: Option<Vec<f64>>,
}

struct EmissionCache {
    /// `[h; e_i]` per batch member.
    ys: Vec<Vec<f64>>,
    /// softplus′(w_dᵀy) per batch member.
    diag_slopes: Vec<f64>,
    grad: EmissionGradient,
}

/// Recorded computation of one training instance, sufficient for a single
/// backward pass over every parameter.
pub struct Tape {
    series_indices: Vec<usize>,
    /// `[batch member][layer][step]`
    cells: Vec<Vec<Vec<StepCache>>>,
    emissions: Vec<EmissionCache>,
    gaussian_nll: f64,
}

impl Tape {
    /// Runs the unrolled network over the instance and records every
    /// intermediate. Dropout is applied when `dropout_rng` is given and the
    /// rate is positive.
    pub fn record<R: Rng + ?Sized>(
        params: &NetworkParams,
        inst: &TrainingInstance,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<Tape> {
        let shape = params.shape;
        let k = shape.hidden;
        let steps = inst.len();
        let batch = inst.series_indices.len();
        let keep = 1.0 - params.dropout_rate;
        let use_dropout = params.dropout_rate > 0.0 && dropout_rng.is_some();

        let mut cells = Vec::with_capacity(batch);
        let mut tops: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batch);
        for (b, &series) in inst.series_indices.iter().enumerate() {
            let mut per_layer: Vec<Vec<StepCache>> = (0..shape.layers).map(|_| Vec::with_capacity(steps)).collect();
            let mut top = Vec::with_capacity(steps);
            let mut h = vec![vec![0.0; k]; shape.layers];
            let mut c = vec![vec![0.0; k]; shape.layers];
            for s in 0..steps {
                let mut x = inst.inputs[b][s].clone();
                if x.len() != shape.input_width {
                    return Err(Error::Dimension {
                        expected: shape.input_width,
                        got: x.len(),
                    });
                }
                if shape.embedding_input {
                    x.extend_from_slice(params.embeddings.row(series));
                }
                for (l, layer) in params.layers.iter().enumerate() {
                    let mut gates = vec![0.0; 4 * k];
                    gate_activations(layer, &x, &h[l], &mut gates);
                    let c_prev = c[l].clone();
                    let h_prev = h[l].clone();
                    for j in 0..k {
                        c[l][j] = gates[k + j] * c_prev[j] + gates[j] * gates[2 * k + j];
                        h[l][j] = gates[3 * k + j] * c[l][j].tanh();
                    }
                    if !h[l].iter().chain(&c[l]).all(|v| v.is_finite()) {
                        return Err(Error::NonFinite {
                            what: "lstm activation",
                            series,
                            step: s,
                        });
                    }
                    let mask = match (&mut dropout_rng, use_dropout) {
                        (Some(rng), true) => Some(
                            (0..k)
                                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                                .collect::<Vec<f64>>(),
                        ),
                        _ => None,
                    };
                    let out: Vec<f64> = match &mask {
                        Some(m) => h[l].iter().zip(m).map(|(a, b)| a * b).collect(),
                        None => h[l].clone(),
                    };
                    per_layer[l].push(StepCache {
                        input: std::mem::replace(&mut x, out),
                        gates,
                        c_prev,
                        c: c[l].clone(),
                        h_prev,
                        mask,
                    });
                }
                top.push(x);
            }
            cells.push(per_layer);
            tops.push(top);
        }

        let mut emissions = Vec::with_capacity(steps);
        let mut gaussian_nll = 0.0;
        let r = shape.rank;
        for s in 0..steps {
            let mut mu = Vec::with_capacity(batch);
            let mut d = Vec::with_capacity(batch);
            let mut v = Matrix::zeros(batch, r);
            let mut ys = Vec::with_capacity(batch);
            let mut diag_slopes = Vec::with_capacity(batch);
            for (b, &series) in inst.series_indices.iter().enumerate() {
                let y = params.feature_vector(&tops[b][s], series);
                let proj = params.project_features(&y);
                let (_, slope) = params.diag_activation(&y);
                mu.push(proj.mu);
                d.push(proj.d);
                v.row_mut(b).copy_from_slice(&proj.v);
                diag_slopes.push(slope);
                ys.push(y);
            }
            let g = LowRankGaussian::new(mu, d, v).map_err(|e| e.at_step(s))?;
            let grad = nll_with_gradient(&g, &inst.targets[s]).map_err(|e| e.at_step(s))?;
            gaussian_nll += grad.nll;
            emissions.push(EmissionCache { ys, diag_slopes, grad });
        }
        if !gaussian_nll.is_finite() {
            return Err(Error::NonFinite {
                what: "loss",
                series: inst.series_indices[0],
                step: 0,
            });
        }
        Ok(Tape {
            series_indices: inst.series_indices.clone(),
            cells,
            emissions,
            gaussian_nll,
        })
    }

    /// `−Σ_t log φ_{μ_t,Σ_t}(x_t)` on the Gaussian scale.
    pub fn gaussian_nll(&self) -> f64 {
        self.gaussian_nll
    }

    /// Gradient of [`Tape::gaussian_nll`] with respect to every parameter.
    pub fn backward(&self, params: &NetworkParams) -> NetworkParams {
        let shape = params.shape;
        let k = shape.hidden;
        let p = shape.projection_width();
        let r = shape.rank;
        let steps = self.emissions.len();
        let mut grads = params.zeros_like();

        // Heads and embeddings; collects ∂/∂(top output) per member and step.
        let mut d_top: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(steps); self.series_indices.len()];
        let mut dy = vec![0.0; p];
        for em in &self.emissions {
            for (b, &series) in self.series_indices.iter().enumerate() {
                let y = &em.ys[b];
                let d_mu = em.grad.d_mu[b];
                let d_a = em.grad.d_d[b] * em.diag_slopes[b];
                let d_v = em.grad.d_v.row(b);
                for j in 0..p {
                    grads.w_mu[j] += d_mu * y[j];
                    grads.w_d[j] += d_a * y[j];
                    dy[j] = d_mu * params.w_mu[j] + d_a * params.w_d[j];
                }
                for a in 0..r {
                    let w_row = params.w_v.row(a);
                    let g_row = grads.w_v.row_mut(a);
                    for j in 0..p {
                        g_row[j] += d_v[a] * y[j];
                        dy[j] += d_v[a] * w_row[j];
                    }
                }
                let emb = grads.embeddings.row_mut(series);
                for (e, g) in emb.iter_mut().zip(&dy[k..]) {
                    *e += g;
                }
                d_top[b].push(dy[..k].to_vec());
            }
        }

        // Backpropagation through time, one series at a time, top layer first.
        let mut dz = vec![0.0; 4 * k];
        for (b, layers) in self.cells.iter().enumerate() {
            let mut d_out = std::mem::take(&mut d_top[b]);
            for l in (0..shape.layers).rev() {
                let layer = &params.layers[l];
                let grad_layer = &mut grads.layers[l];
                let input_width = layer.w_ih.cols();
                let embedding_grad = l == 0 && shape.embedding_input;
                let mut d_below = if l > 0 { vec![vec![0.0; input_width]; steps] } else { Vec::new() };
                let mut d_emb = vec![0.0; if embedding_grad { shape.embedding_dim } else { 0 }];
                let mut dh_next = vec![0.0; k];
                let mut dc_next = vec![0.0; k];
                for s in (0..steps).rev() {
                    let cache = &layers[l][s];
                    let g = &cache.gates;
                    for j in 0..k {
                        let upstream = match &cache.mask {
                            Some(m) => d_out[s][j] * m[j],
                            None => d_out[s][j],
                        };
                        let dh = upstream + dh_next[j];
                        let (i, f, gg, o) = (g[j], g[k + j], g[2 * k + j], g[3 * k + j]);
                        let tc = cache.c[j].tanh();
                        let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                        dz[j] = dc * gg * i * (1.0 - i);
                        dz[k + j] = dc * cache.c_prev[j] * f * (1.0 - f);
                        dz[2 * k + j] = dc * i * (1.0 - gg * gg);
                        dz[3 * k + j] = dh * tc * o * (1.0 - o);
                        dc_next[j] = dc * f;
                    }
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    for (row, &dzr) in dz.iter().enumerate() {
                        if dzr == 0.0 {
                            continue;
                        }
                        grad_layer.bias[row] += dzr;
                        let gi = grad_layer.w_ih.row_mut(row);
                        for (gw, xv) in gi.iter_mut().zip(&cache.input) {
                            *gw += dzr * xv;
                        }
                        let gh = grad_layer.w_hh.row_mut(row);
                        for (gw, hv) in gh.iter_mut().zip(&cache.h_prev) {
                            *gw += dzr * hv;
                        }
                        for (dn, w) in dh_next.iter_mut().zip(layer.w_hh.row(row)) {
                            *dn += dzr * w;
                        }
                        if l > 0 {
                            for (dx, w) in d_below[s].iter_mut().zip(layer.w_ih.row(row)) {
                                *dx += dzr * w;
                            }
                        } else if embedding_grad {
                            let tail = &layer.w_ih.row(row)[shape.input_width..];
                            for (de, w) in d_emb.iter_mut().zip(tail) {
                                *de += dzr * w;
                            }
                        }
                    }
                }
                if embedding_grad {
                    let emb = grads.embeddings.row_mut(self.series_indices[b]);
                    for (e, g) in emb.iter_mut().zip(&d_emb) {
                        *e += g;
                    }
                }
                d_out = d_below;
            }
        }
        grads
    }
}

/// Loss of one training instance with its parameter gradient.
#[derive(Debug, Clone)]
pub struct LossAndGrads {
    /// `gaussian_nll − copula_correction`: the negative log-likelihood of the
    /// data-scale observations.
    pub loss: f64,
    pub gaussian_nll: f64,
    /// `Σ log-density corrections` over the observations inside their
    /// marginal support. Parameter-free, so it carries no gradient.
    pub copula_correction: f64,
    /// Observations outside their marginal support, left out of the correction.
    pub skipped_corrections: usize,
    pub grads: NetworkParams,
}

/// `−Σ_t log p(z_t | h_t)` over the instance and its gradient from one
/// backward pass. `transforms` is indexed by series; pass an empty slice to
/// leave out the copula correction.
pub fn loss_and_grads<R: Rng + ?Sized>(
    params: &NetworkParams,
    inst: &TrainingInstance,
    transforms: &[MarginalTransform],
    dropout_rng: Option<&mut R>,
) -> Result<LossAndGrads> {
    let tape = Tape::record(params, inst, dropout_rng)?;
    let grads = tape.backward(params);
    let (copula_correction, skipped_corrections) = copula_correction(inst, transforms);
    let gaussian_nll = tape.gaussian_nll();
    Ok(LossAndGrads {
        loss: gaussian_nll - copula_correction,
        gaussian_nll,
        copula_correction,
        skipped_corrections,
        grads,
    })
}

fn copula_correction(inst: &TrainingInstance, transforms: &[MarginalTransform]) -> (f64, usize) {
    if transforms.is_empty() {
        return (0.0, 0);
    }
    let mut total = 0.0;
    let mut skipped = 0;
    for row in &inst.observations {
        for (&z, &series) in row.iter().zip(&inst.series_indices) {
            match transforms[series].log_correction(z) {
                Ok(c) => total += c,
                Err(_) => skipped += 1,
            }
        }
    }
    (total, skipped)
}

/// Central finite-difference check of every parameter against
/// [`Tape::backward`]. Returns `(tensor name, worst relative error)` per tensor.
pub fn gradient_check(
    params: &NetworkParams,
    inst: &TrainingInstance,
    step: f64,
    corrupt: bool,
) -> Result<Vec<(String, f64)>> {
    let mut analytic = Tape::record::<ChaCha8Rng>(params, inst, None)?.backward(params);
    if corrupt {
        if let Some(first) = analytic.tensors_mut().into_iter().next() {
            first[0] += 1.0;
        }
    }
    let analytic: Vec<Vec<f64>> = analytic.tensors().into_iter().map(|t| t.data.to_vec()).collect();
    let names: Vec<String> = params.tensors().into_iter().map(|t| t.name).collect();
    let mut probe = params.clone();
    let mut report = Vec::with_capacity(names.len());
    for (ti, name) in names.into_iter().enumerate() {
        let len = analytic[ti].len();
        let mut worst: f64 = 0.0;
        for e in 0..len {
            let orig = probe.tensors_mut()[ti][e];
            probe.tensors_mut()[ti][e] = orig + step;
            let plus = Tape::record::<ChaCha8Rng>(&probe, inst, None)?.gaussian_nll();
            probe.tensors_mut()[ti][e] = orig - step;
            let minus = Tape::record::<ChaCha8Rng>(&probe, inst, None)?.gaussian_nll();
            probe.tensors_mut()[ti][e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            worst = worst.max(relative_error(analytic[ti][e], numeric));
        }
        report.push((name, worst));
    }
    Ok(report)
}

/// `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// The small model and instance used by the gradient check: N = 3 series,
/// B = 2, 4 hidden cells in 2 layers, rank 2, embeddings of width 2, 5 steps.
pub fn gradcheck_fixture(seed: u64) -> Result<(NetworkParams, TrainingInstance)> {
    gradcheck_fixture_with(seed, false)
}

/// [`gradcheck_fixture`], optionally with the embedding also fed to the LSTM.
pub fn gradcheck_fixture_with(seed: u64, embedding_input: bool) -> Result<(NetworkParams, TrainingInstance)> {
    use super::params::ModelShape;
    use rand::SeedableRng;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = ModelShape {
        input_width: 3,
        hidden: 4,
        layers: 2,
        rank: 2,
        embedding_dim: 2,
        num_series: 3,
        embedding_input,
    };
    let mut params = NetworkParams::init(shape, 0.0, &mut rng)?;
    // Embeddings start near zero; widen them so their gradients are not tiny.
    for e in params.embeddings.as_mut_slice() {
        *e = rng.random_range(-0.5..0.5);
    }
    let steps = 5;
    let series_indices = vec![2, 0];
    let inputs = series_indices
        .iter()
        .map(|_| {
            (0..steps)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect();
    let targets: Vec<Vec<f64>> = (0..steps)
        .map(|_| (0..2).map(|_| rng.random_range(-1.5..1.5)).collect())
        .collect();
    let inst = TrainingInstance {
        series_indices,
        start: 0,
        inputs,
        observations: targets.clone(),
        targets,
    };
    Ok((params, inst))
}
