use std::path::PathBuf;

use crate::model::MarketSignal;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument fell outside the domain where the formula is defined.
    #[error("{what} out of domain: {value}")]
    Domain { what: &'static str, value: f64 },

    /// Offered load reached or exceeded a server's capacity.
    #[error("unstable queue: offered load {load} >= capacity {capacity}")]
    Unstable { load: f64, capacity: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate population: {0}")]
    Degenerate(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    /// The learning loop ended on a posting whose realized loads are unstable.
    #[error("congestion oracle unstable at posted signal {signal:?}")]
    OracleUnstable { signal: MarketSignal },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Short machine-readable category, used for CLI exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain { .. } => "domain",
            Error::Unstable { .. } | Error::OracleUnstable { .. } => "instability",
            Error::Config(_) => "config",
            Error::Degenerate(_) => "degenerate",
            Error::NonConvergence { .. } => "convergence",
            Error::Io { .. } | Error::Csv { .. } => "io",
        }
    }

    pub(crate) fn domain(what: &'static str, value: f64) -> Self {
        Error::Domain { what, value }
    }
}
