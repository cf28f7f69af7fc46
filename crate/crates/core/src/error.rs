use alloc::string::String;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A precondition on an argument does not hold.
    InvalidArgument(String),
    /// Two distributions or vector sets were defined over different supports.
    SupportMismatch { left: usize, right: usize },
    /// An estimator was handed no data.
    EmptyInput(&'static str),
    /// The bias component shares its mode with the source.
    SharedMode { mode: usize },
    /// The weight mean is not orthogonal to the language shift.
    NotOrthogonal { dot: f64 },
    /// A target correctness row has no matching source row.
    MissingSource { question: String },
    /// The same key was inserted twice.
    Duplicate(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::SupportMismatch { left, right } => {
                write!(f, "support mismatch: {left} vs {right} entries")
            }
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::SharedMode { mode } => {
                write!(f, "bias component shares the source mode (category {mode})")
            }
            Error::NotOrthogonal { dot } => write!(
                f,
                "weight mean is not orthogonal to the language shift (dot = {dot:e})"
            ),
            Error::MissingSource { question } => {
                write!(f, "question {question:?} has target rows but no source row")
            }
            Error::Duplicate(key) => write!(f, "duplicate entry {key}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
