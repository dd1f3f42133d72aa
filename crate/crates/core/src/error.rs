use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("line {line}: field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Failures caused by non-finite or out-of-domain numbers.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::InvalidValue(_))
    }

    pub(crate) fn dims(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }

    pub(crate) fn parse(line: usize, field: &str, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}
