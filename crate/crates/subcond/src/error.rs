use thiserror::Error;

/// Errors raised by distribution construction, metric evaluation and oracle
/// queries.
#[derive(Debug, Error)]
pub enum Error {
    #[error("alphabet must have at least 2 symbols, got {0}")]
    AlphabetTooSmall(usize),

    #[error("dimension must be at least 1")]
    EmptyDimension,

    #[error("probability at index {index} is {value}, expected nonnegative")]
    NegativeProbability { index: usize, value: f64 },

    #[error("probabilities sum to {sum}, expected 1 within {tolerance:e}")]
    NotNormalized { sum: f64, tolerance: f64 },

    #[error("expected {expected} probabilities, got {actual}")]
    WrongLength { expected: usize, actual: usize },

    #[error("table of size m^n = {size} exceeds the enumeration cap {cap}")]
    EnumerationCapExceeded { size: u128, cap: usize },

    #[error("coordinate {index} out of range for dimension {n}")]
    CoordinateOutOfRange { index: usize, n: usize },

    #[error("symbol {symbol} out of range for alphabet of size {m}")]
    SymbolOutOfRange { symbol: usize, m: usize },

    #[error("prefix of length {got} not valid here (expected {expected})")]
    BadPrefixLength { got: usize, expected: usize },

    #[error("shape mismatch: ({n_left},{m_left}) vs ({n_right},{m_right})")]
    ShapeMismatch {
        n_left: usize,
        m_left: usize,
        n_right: usize,
        m_right: usize,
    },

    #[error("invalid subcube condition: {0}")]
    InvalidCondition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("malformed distribution file: {0}")]
    MalformedFile(String),

    #[error("internal invariant violated: {0}")]
    InvariantViolated(String),
}

pub type Result<T> = std::result::Result<T, Error>;
