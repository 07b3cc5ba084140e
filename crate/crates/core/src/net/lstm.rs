use crate::error::{Error, Result};
use crate::linalg::dot;

use super::params::{LstmLayer, ModelShape, NetworkParams};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Hidden and cell vectors of every layer for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl SeriesState {
    pub fn zeros(shape: &ModelShape) -> Self {
        SeriesState {
            h: vec![vec![0.0; shape.hidden]; shape.layers],
            c: vec![vec![0.0; shape.hidden]; shape.layers],
        }
    }

    /// Output of the last layer.
    pub fn top(&self) -> &[f64] {
        self.h.last().expect("at least one layer")
    }

    /// Advances every layer by one step without dropout.
    pub fn advance(&mut self, params: &NetworkParams, input: &[f64], series: usize, step: usize) -> Result<()> {
        let k = params.shape.hidden;
        let mut gates = vec![0.0; 4 * k];
        let mut x: Vec<f64> = input.to_vec();
        if params.shape.embedding_input {
            x.extend_from_slice(params.embeddings.row(series));
        }
        for (l, layer) in params.layers.iter().enumerate() {
            if x.len() != layer.w_ih.cols() {
                return Err(Error::Dimension {
                    expected: layer.w_ih.cols(),
                    got: x.len(),
                });
            }
            gate_activations(layer, &x, &self.h[l], &mut gates);
            let (c, h) = (&mut self.c[l], &mut self.h[l]);
            for j in 0..k {
                let (i, f, g, o) = (gates[j], gates[k + j], gates[2 * k + j], gates[3 * k + j]);
                c[j] = f * c[j] + i * g;
                h[j] = o * c[j].tanh();
            }
            if !h.iter().chain(c.iter()).all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "lstm activation",
                    series,
                    step,
                });
            }
            x.clone_from(h);
        }
        Ok(())
    }
}

/// Per-series states for a set of series, zero at sequence start.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub series: Vec<SeriesState>,
}

impl NetworkState {
    pub fn zeros(shape: &ModelShape, num_series: usize) -> Self {
        NetworkState {
            series: vec![SeriesState::zeros(shape); num_series],
        }
    }
}

/// Writes `[σ(z_i), σ(z_f), tanh(z_g), σ(z_o)]` for
/// `z = W_ih x + W_hh h + b` into `gates`.
pub(crate) fn gate_activations(layer: &LstmLayer, x: &[f64], h_prev: &[f64], gates: &mut [f64]) {
    let k = h_prev.len();
    for (row, g) in gates.iter_mut().enumerate() {
        let z = layer.bias[row] + dot(layer.w_ih.row(row), x) + dot(layer.w_hh.row(row), h_prev);
        *g = if (2 * k..3 * k).contains(&row) {
            z.tanh()
        } else {
            sigmoid(z)
        };
    }
}

/// One LSTM step for a single series: returns the successor state.
pub fn lstm_step(
    params: &NetworkParams,
    state: &SeriesState,
    input: &[f64],
    series: usize,
    step: usize,
) -> Result<SeriesState> {
    let mut next = state.clone();
    next.advance(params, input, series, step)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(layers: usize) -> ModelShape {
        ModelShape {
            input_width: 3,
            hidden: 4,
            layers,
            rank: 2,
            embedding_dim: 2,
            num_series: 3,
            embedding_input: false,
        }
    }

    #[test]
    fn zero_weights_give_zero_state() {
        let p = NetworkParams::zeros(shape(2), 0.0);
        let s = SeriesState::zeros(&p.shape);
        let next = lstm_step(&p, &s, &[1.0, -2.0, 3.0], 0, 0).unwrap();
        assert!(next.h.iter().chain(&next.c).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = NetworkParams::init(shape(2), 0.0, &mut rng).unwrap();
        let s = SeriesState::zeros(&p.shape);
        let a = lstm_step(&p, &s, &[0.3, 0.1, -0.2], 0, 0).unwrap();
        let b = lstm_step(&p, &s, &[0.3, 0.1, -0.2], 0, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matches_scalar_gate_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = NetworkParams::init(shape(1), 0.0, &mut rng).unwrap();
        let mut s = SeriesState::zeros(&p.shape);
        for j in 0..4 {
            s.h[0][j] = rng.random_range(-0.5..0.5);
            s.c[0][j] = rng.random_range(-0.5..0.5);
        }
        let x = [0.7, -0.1, 0.25];
        let next = lstm_step(&p, &s, &x, 0, 0).unwrap();

        // Hand-unrolled gate equations, one unit at a time.
        let l = &p.layers[0];
        let pre = |row: usize| {
            let mut z = l.bias[row];
            for c in 0..3 {
                z += l.w_ih[(row, c)] * x[c];
            }
            for c in 0..4 {
                z += l.w_hh[(row, c)] * s.h[0][c];
            }
            z
        };
        let logistic = |z: f64| 1.0 / (1.0 + (-z).exp());
        for j in 0..4 {
            let i = logistic(pre(j));
            let f = logistic(pre(4 + j));
            let g = pre(8 + j).tanh();
            let o = logistic(pre(12 + j));
            let c = f * s.c[0][j] + i * g;
            let h = o * c.tanh();
            assert!((next.c[0][j] - c).abs() < 1e-12);
            assert!((next.h[0][j] - h).abs() < 1e-12);
        }
    }

    #[test]
    fn wrong_input_width_is_rejected() {
        let p = NetworkParams::zeros(shape(1), 0.0);
        let s = SeriesState::zeros(&p.shape);
        assert!(matches!(
            lstm_step(&p, &s, &[1.0], 0, 0),
            Err(Error::Dimension { expected: 3, got: 1 })
        ));
    }

    #[test]
    fn non_finite_input_reports_location() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = NetworkParams::init(shape(1), 0.0, &mut rng).unwrap();
        let s = SeriesState::zeros(&p.shape);
        match lstm_step(&p, &s, &[f64::NAN, 0.0, 0.0], 2, 7) {
            Err(Error::NonFinite { series, step, .. }) => assert_eq!((series, step), (2, 7)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
