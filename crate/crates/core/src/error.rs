use alloc::string::String;

/// Errors raised by the core crate.
///
/// The variants follow the four failure classes used throughout the crate:
/// malformed shapes, violated preconditions, numerical breakdown and
/// malformed binary input.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric failure: {detail} (residual {residual:e})")]
    Numeric { detail: String, residual: f64 },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn contract(detail: impl Into<String>) -> Self {
        Error::Contract(detail.into())
    }
}
