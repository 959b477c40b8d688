use alloc::string::String;
use core::fmt;

/// Failure categories surfaced by the pruning core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Caller supplied arguments that violate a precondition.
    Input(String),
    /// A non-finite value appeared during computation.
    Numeric { layer: Option<usize>, detail: String },
    /// A structural edit would leave the model without a valid shape.
    Structural(String),
    /// Run configuration is infeasible.
    Config(String),
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn numeric(layer: Option<usize>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            layer,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Input(msg) => write!(f, "input error: {msg}"),
            Error::Numeric {
                layer: Some(layer),
                detail,
            } => write!(f, "numeric error in layer {layer}: {detail}"),
            Error::Numeric { layer: None, detail } => write!(f, "numeric error: {detail}"),
            Error::Structural(msg) => write!(f, "structural error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
