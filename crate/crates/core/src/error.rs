use std::io;

/// Errors raised by kernels, the tape, the model and the file formats.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operand shapes are incompatible. `detail` names the offending dimension.
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: invalid argument: {detail}")]
    Invalid { op: &'static str, detail: String },

    /// Bad configuration value, unknown key, or a checkpoint that does not
    /// fit the requested model.
    #[error("config: {0}")]
    Config(String),

    #[error("tape: {0}")]
    Tape(String),

    #[error("format: {0}")]
    Format(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Invalid {
        op,
        detail: detail.into(),
    }
}
