//! The per-series LSTM state model, its shared projection heads, and the
//! gradient engine.
//!
//! Every series is unrolled separately with tied weights; the heads map
//! `[h_{i,t}; e_i]` to the emission parameters `(μ_i, d_i, v_i)` of a joint
//! low-rank Gaussian over the series scored together.

mod emission;
mod features;
mod lstm;
mod params;
mod tape;

pub use emission::{assemble, kernel_eval, project, softplus, Projection};
pub use features::FeatureSpec;
pub use lstm::{lstm_step, NetworkState, SeriesState};
pub use params::{LstmLayer, ModelShape, NetworkParams, TensorRef};
pub use tape::{gradcheck_fixture, gradcheck_fixture_with, gradient_check, loss_and_grads, relative_error, LossAndGrads, Tape};
