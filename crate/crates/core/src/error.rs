use alloc::string::String;
use core::fmt;

/// Crate-wide error type.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Invalid configuration value (bad DFT size, empty filters, ...).
    Config(String),
    /// An operation was called with arguments that violate its contract,
    /// e.g. a feature sequence of the wrong kind.
    Usage(String),
    /// Shapes of the operands do not conform.
    Dimension { expected: usize, got: usize, what: &'static str },
    /// Dictionary / model training could not proceed.
    Training(String),
    /// Not enough data to estimate a table or statistic.
    Estimation(String),
    /// Accumulated statistics are numerically unusable (non-PSD, singular
    /// beyond regularization, degenerate dictionary column).
    Numerical(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Dimension { expected, got, what } => {
                write!(f, "dimension mismatch in {what}: expected {expected}, got {got}")
            }
            Error::Training(m) => write!(f, "training error: {m}"),
            Error::Estimation(m) => write!(f, "estimation error: {m}"),
            Error::Numerical(m) => write!(f, "numerical error: {m}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
