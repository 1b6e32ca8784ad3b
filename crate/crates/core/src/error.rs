use thiserror::Error;

/// Error type for every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum PaintError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("CFL condition violated: {cfl:.4} > {limit}")]
    Cfl { cfl: f64, limit: f64 },

    #[error("numerical failure at step {step}: {detail}")]
    Numerical { step: usize, detail: String },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PaintError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        PaintError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PaintError::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = PaintError> = std::result::Result<T, E>;
