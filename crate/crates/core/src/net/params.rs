use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Sizes that fix the shapes of every tensor in [`NetworkParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub input_width: usize,
    pub hidden: usize,
    pub layers: usize,
    pub rank: usize,
    pub embedding_dim: usize,
    pub num_series: usize,
    /// Also feed `e_i` to the first LSTM layer after the step features.
    #[serde(default)]
    pub embedding_input: bool,
}

impl ModelShape {
    /// Width of the projection input `[h; e_i]`.
    pub fn projection_width(&self) -> usize {
        self.hidden + self.embedding_dim
    }

    /// Width of the first LSTM layer's input.
    pub fn lstm_input_width(&self) -> usize {
        self.input_width + if self.embedding_input { self.embedding_dim } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.rank == 0 || self.num_series == 0 {
            return Err(Error::Config(format!(
                "hidden size, layers, rank and number of series must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Weights of one LSTM layer; gate blocks are stacked in the order
/// input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    /// `4k × input`
    pub w_ih: Matrix,
    /// `4k × k`
    pub w_hh: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub shape: ModelShape,
    pub layers: Vec<LstmLayer>,
    pub w_mu: Vec<f64>,
    pub w_d: Vec<f64>,
    /// `r × p`
    pub w_v: Matrix,
    /// `N × E`
    pub embeddings: Matrix,
    pub dropout_rate: f64,
}

/// Borrowed view of one named tensor.
#[derive(Debug)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

impl NetworkParams {
    pub fn zeros(shape: ModelShape, dropout_rate: f64) -> Self {
        let k = shape.hidden;
        let layers = (0..shape.layers)
            .map(|l| {
                let input = if l == 0 { shape.lstm_input_width() } else { k };
                LstmLayer {
                    w_ih: Matrix::zeros(4 * k, input),
                    w_hh: Matrix::zeros(4 * k, k),
                    bias: vec![0.0; 4 * k],
                }
            })
            .collect();
        let p = shape.projection_width();
        NetworkParams {
            shape,
            layers,
            w_mu: vec![0.0; p],
            w_d: vec![0.0; p],
            w_v: Matrix::zeros(shape.rank, p),
            embeddings: Matrix::zeros(shape.num_series, shape.embedding_dim),
            dropout_rate,
        }
    }

    /// Scaled uniform initialization `U(−1/√fan_in, 1/√fan_in)` for weights
    /// and `N(0, 0.1²)` for embeddings.
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, dropout_rate: f64, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate must lie in [0, 1), got {dropout_rate}")));
        }
        let k = shape.hidden;
        let layers = (0..shape.layers)
            .map(|l| {
                let input = if l == 0 { shape.lstm_input_width() } else { k };
                let bound_h = 1.0 / (k as f64).sqrt();
                LstmLayer {
                    w_ih: uniform_matrix(4 * k, input, 1.0 / (input.max(1) as f64).sqrt(), rng),
                    w_hh: uniform_matrix(4 * k, k, bound_h, rng),
                    bias: (0..4 * k).map(|_| rng.random_range(-bound_h..=bound_h)).collect(),
                }
            })
            .collect();
        let p = shape.projection_width();
        let bound_p = 1.0 / (p as f64).sqrt();
        let w_mu = (0..p).map(|_| rng.random_range(-bound_p..=bound_p)).collect();
        let w_d = (0..p).map(|_| rng.random_range(-bound_p..=bound_p)).collect();
        let w_v = uniform_matrix(shape.rank, p, bound_p, rng);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let embeddings = Matrix::from_fn(shape.num_series, shape.embedding_dim, |_, _| normal.sample(rng));
        Ok(NetworkParams {
            shape,
            layers,
            w_mu,
            w_d,
            w_v,
            embeddings,
            dropout_rate,
        })
    }

    pub fn zeros_like(&self) -> Self {
        NetworkParams::zeros(self.shape, self.dropout_rate)
    }

    /// Every tensor in a fixed order with stable names.
    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 4);
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(TensorRef {
                name: format!("lstm.{l}.w_ih"),
                shape: vec![layer.w_ih.rows(), layer.w_ih.cols()],
                data: layer.w_ih.as_slice(),
            });
            out.push(TensorRef {
                name: format!("lstm.{l}.w_hh"),
                shape: vec![layer.w_hh.rows(), layer.w_hh.cols()],
                data: layer.w_hh.as_slice(),
            });
            out.push(TensorRef {
                name: format!("lstm.{l}.bias"),
                shape: vec![layer.bias.len()],
                data: &layer.bias,
            });
        }
        out.push(TensorRef {
            name: "proj.w_mu".into(),
            shape: vec![self.w_mu.len()],
            data: &self.w_mu,
        });
        out.push(TensorRef {
            name: "proj.w_d".into(),
            shape: vec![self.w_d.len()],
            data: &self.w_d,
        });
        out.push(TensorRef {
            name: "proj.w_v".into(),
            shape: vec![self.w_v.rows(), self.w_v.cols()],
            data: self.w_v.as_slice(),
        });
        out.push(TensorRef {
            name: "embeddings".into(),
            shape: vec![self.embeddings.rows(), self.embeddings.cols()],
            data: self.embeddings.as_slice(),
        });
        out
    }

    /// Mutable slices in the same order as [`NetworkParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(3 * self.layers.len() + 4);
        for layer in self.layers.iter_mut() {
            out.push(layer.w_ih.as_mut_slice());
            out.push(layer.w_hh.as_mut_slice());
            out.push(&mut layer.bias);
        }
        out.push(&mut self.w_mu);
        out.push(&mut self.w_d);
        out.push(self.w_v.as_mut_slice());
        out.push(self.embeddings.as_mut_slice());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &NetworkParams, scale: f64) {
        let src: Vec<&[f64]> = other.tensors().into_iter().map(|t| t.data).collect();
        for (dst, src) in self.tensors_mut().into_iter().zip(src) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Rebuilds parameters from named tensors, checking every shape.
    pub fn from_tensors(shape: ModelShape, dropout_rate: f64, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        shape.validate()?;
        let mut params = NetworkParams::zeros(shape, dropout_rate);
        let expected: Vec<(String, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|t| (t.name, t.shape))
            .collect();
        if tensors.len() != expected.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, model needs {}",
                tensors.len(),
                expected.len()
            )));
        }
        for ((dst, (name, shape)), (got_name, got_shape, data)) in
            params.tensors_mut().into_iter().zip(expected).zip(tensors)
        {
            if &name != got_name || &shape != got_shape || data.len() != dst.len() {
                return Err(Error::Data(format!(
                    "checkpoint tensor {got_name} {got_shape:?} does not match expected {name} {shape:?}"
                )));
            }
            dst.copy_from_slice(data);
        }
        Ok(params)
    }
}
