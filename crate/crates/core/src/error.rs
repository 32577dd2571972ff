use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("QP infeasible at alternating iteration {iteration} (certificate residual {certificate:.3e})")]
    Infeasible { iteration: usize, certificate: f64 },

    #[error("QP solver did not reach tolerance at alternating iteration {iteration} (KKT residual {residual:.3e})")]
    QpNotConverged { iteration: usize, residual: f64 },

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("plant simulation failed at step {step}: {source}")]
    Plant {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("controller failed at step {step}: {source}")]
    Controller {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("empty window: {0}")]
    EmptyWindow(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// True for failures caused by numerics (as opposed to bad input or I/O).
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Infeasible { .. }
                | Error::QpNotConverged { .. }
                | Error::RankDeficient(_)
                | Error::Plant { .. }
                | Error::Controller { .. }
        )
    }
}
