use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand extents disagree or a buffer has the wrong length.
    Shape { op: &'static str, detail: String },
    EmptySequence,
    LabelRange { label: usize, vocab: usize },
    /// A NaN or infinity appeared where every value must be finite.
    NonFinite { context: String },
    Config(String),
    Recipe(String),
    Split(String),
    Spec(String),
    Eval(String),
    Param(String),
    Aggregate { detail: String, seeds: Vec<u64> },
    Series(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "dimension error in {op}: {detail}"),
            Error::EmptySequence => f.write_str("empty sequence"),
            Error::LabelRange { label, vocab } => {
                write!(f, "label {label} out of range for vocabulary of {vocab}")
            }
            Error::NonFinite { context } => write!(f, "non-finite value: {context}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Recipe(m) => write!(f, "recipe error: {m}"),
            Error::Split(m) => write!(f, "split error: {m}"),
            Error::Spec(m) => write!(f, "spec error: {m}"),
            Error::Eval(m) => write!(f, "eval error: {m}"),
            Error::Param(m) => write!(f, "parameter error: {m}"),
            Error::Aggregate { detail, seeds } => {
                write!(f, "aggregation error: {detail} (seeds {seeds:?})")
            }
            Error::Series(m) => write!(f, "series error: {m}"),
        }
    }
}

impl core::error::Error for Error {}
