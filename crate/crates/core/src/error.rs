use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A spec, operator, integrand or experiment configuration is malformed.
    #[error("configuration error: {0}")]
    Config(String),

    /// An operation was called outside its domain.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A p-th moment that must be finite is infinite.
    #[error("infinite {p}-th moment in mode {mode}")]
    InfiniteMoment { mode: usize, p: f64 },

    /// A mode of the driving noise has no finite mean, so no drift/martingale split exists.
    #[error("mode {mode} has no finite mean")]
    NoMean { mode: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A p-summing upper bound needs a rank-one decomposition that is not available.
    #[error("no rank-one decomposition available for {0}")]
    MissingDecomposition(String),

    /// A decision rule read the path history past its anchor time.
    #[error("measurability violation: history read at t = {requested} with anchor {anchor}")]
    Measurability { requested: f64, anchor: f64 },

    #[error("empty input")]
    EmptyInput,

    /// A dominating-function assumption of the evolution problem is violated.
    #[error("assumption {inequality} violated: ratio {ratio}")]
    AssumptionFailure { inequality: String, ratio: f64 },

    /// No weight parameter below the cap makes the Picard map a contraction.
    #[error("no contraction up to beta = {cap}: 2^(p-1)(C + C') = {value}")]
    NoContraction { cap: f64, value: f64 },

    /// Picard distances grew for several consecutive iterations.
    #[error("Picard iteration diverging, measured ratio {ratio}")]
    Divergence { ratio: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(e.to_string())
    }
}
