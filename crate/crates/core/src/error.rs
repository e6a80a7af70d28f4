use thiserror::Error;

/// Errors raised by graph construction, model fitting and variance estimation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    /// Malformed input: out-of-range ids, self-loops, misaligned vectors.
    #[error("invalid data: {0}")]
    Data(String),

    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Bad model or scenario specification.
    #[error("invalid specification: {0}")]
    Spec(String),

    /// Design matrix without full column rank.
    #[error("rank-deficient design; dependent columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    /// Not enough usable observations for a weighted fit.
    #[error("insufficient data: {0}")]
    Insufficient(String),

    /// Optimizer stopped before meeting its tolerance.
    #[error("{what} did not converge after {iterations} iterations")]
    NonConvergence { what: String, iterations: u64 },

    /// Sandwich bread matrix singular or too ill-conditioned to invert.
    #[error("ill-conditioned bread matrix (condition number {condition:.3e})")]
    IllConditioned { condition: f64 },

    /// Non-finite intermediate (weights, likelihood, covariance).
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    /// Short machine-readable tag, used in diagnostics columns and exclusion logs.
    pub fn cause_tag(&self) -> &'static str {
        match self {
            Error::Data(_) => "data",
            Error::Domain(_) => "domain",
            Error::Spec(_) => "spec",
            Error::RankDeficient { .. } => "rank",
            Error::Insufficient(_) => "insufficient",
            Error::NonConvergence { .. } => "nonconvergence",
            Error::IllConditioned { .. } => "ill_conditioned",
            Error::Numerical(_) => "numerical",
        }
    }

    /// True for failures of the fitting / variance machinery rather than the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::RankDeficient { .. }
                | Error::Insufficient(_)
                | Error::NonConvergence { .. }
                | Error::IllConditioned { .. }
                | Error::Numerical(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
