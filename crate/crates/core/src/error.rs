use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("function `{label}` returned a non-finite value at {at}")]
    Evaluation { label: String, at: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("value out of supported range: {0}")]
    Range(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("Gram matrix is not positive definite: pivot {index} is {pivot:e}")]
    SingularGram { index: usize, pivot: f64 },

    #[error("prior sampling failed: {0}")]
    Sampling(String),

    #[error("posterior variance {0:e} is negative beyond tolerance")]
    NegativeVariance(f64),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("design error: {0}")]
    Design(String),

    #[error("truncation failed: acceptance rate {acceptance_rate} after {attempts} draws")]
    TruncationFailure { acceptance_rate: f64, attempts: usize },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("experiment `{id}`: {source}")]
    Experiment {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// True for failures of the numerical pipeline (as opposed to malformed input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::SingularGram { .. }
            | Error::Sampling(_)
            | Error::NegativeVariance(_)
            | Error::TruncationFailure { .. }
            | Error::Evaluation { .. }
            | Error::Domain(_) => true,
            Error::Experiment { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
