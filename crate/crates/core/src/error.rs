use thiserror::Error;

/// Errors raised by the corrector and its supporting modules.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{size} labels exceed the enumeration cap of {cap} (Bell({size}) = {bell} partitions); raise the cap with an explicit cost acknowledgment")]
    SizeLimit { size: usize, cap: usize, bell: u64 },

    #[error("value {value} out of range for {what} (allowed {min}..={max})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },

    #[error("requested derivative order {requested} exceeds the maximum order {max}")]
    OrderOverflow { requested: usize, max: usize },

    #[error("jets of different orders ({left} and {right}) cannot be combined")]
    MixedOrders { left: usize, right: usize },

    #[error("log-derivative undefined: generating function value {value:e} at x = {at} is not positive")]
    SingularEvaluation { at: f64, value: f64 },

    #[error("invalid cardinality distribution: {0}")]
    InvalidDistribution(String),

    #[error("degenerate prior: {0}")]
    DegeneratePrior(String),

    #[error("non-finite value {value} at grid point {point}")]
    NonFinite { point: usize, value: f64 },

    #[error("model violation: {0}")]
    ModelViolation(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("degenerate update: {0}")]
    DegenerateUpdate(String),

    #[error("numeric overflow: {0}")]
    Overflow(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("scale cap exceeded: {0}")]
    ScaleCap(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
