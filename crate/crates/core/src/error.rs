use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A Cholesky pivot was not strictly positive.
    #[error("cholesky factorization failed at pivot {pivot} (value {value:e})")]
    Cholesky { pivot: usize, value: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite {what} at series {series}, step {step}")]
    NonFinite {
        what: &'static str,
        series: usize,
        step: usize,
    },

    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("at update {update}: {source}")]
    AtUpdate {
        update: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("training diverged at update {update} (loss {loss})")]
    Divergence { update: usize, loss: f64 },

    #[error("value {value} lies outside the support of the marginal estimate")]
    OutsideSupport { value: f64 },

    #[error("{0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Error {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// Process exit code for the command line: 2 config, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Data(_)
            | Error::Io(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Dimension { .. }
            | Error::OutsideSupport { .. } => 3,
            Error::Cholesky { .. } | Error::NonFinite { .. } | Error::Divergence { .. } => 4,
            Error::AtStep { source, .. } | Error::AtUpdate { source, .. } => source.exit_code(),
        }
    }
}
