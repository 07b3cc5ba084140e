pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod copula;
pub mod data;
pub mod error;
pub mod forecasting;
pub mod linalg;
pub mod lowrank;
pub mod metrics;
pub mod model;
pub mod net;
pub mod synthetic;
pub mod training;

pub use error::{Error, Result};
