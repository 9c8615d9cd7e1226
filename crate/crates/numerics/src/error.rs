use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch, expected {expected}, got {got:?}")]
    Shape { op: &'static str, expected: String, got: Vec<usize> },
    #[error("{op}: {reason}")]
    Invalid { op: &'static str, reason: String },
    #[error("{op}: non-finite value in input")]
    NonFinite { op: &'static str },
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, got: &[usize]) -> Self {
        NumericsError::Shape {
            op,
            expected: expected.into(),
            got: got.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, reason: impl Into<String>) -> Self {
        NumericsError::Invalid { op, reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, NumericsError>;
