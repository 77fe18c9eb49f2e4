use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error("{op}: shape mismatch, expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Dimension { op: &'static str, msg: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, GradError>;

pub(crate) fn shape_err(op: &'static str, expected: &[usize], got: &[usize]) -> GradError {
    GradError::Shape {
        op,
        expected: expected.to_vec(),
        got: got.to_vec(),
    }
}

pub(crate) fn dim_err(op: &'static str, msg: impl Into<String>) -> GradError {
    GradError::Dimension {
        op,
        msg: msg.into(),
    }
}
