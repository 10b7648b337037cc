use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },
    #[error("invalid parameter for {op}: {detail}")]
    Parameter { op: &'static str, detail: String },
    #[error("usage error: {0}")]
    Usage(String),
}

impl TensorError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn param(op: &'static str, detail: impl Into<String>) -> Self {
        TensorError::Parameter { op, detail: detail.into() }
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
