use thiserror::Error;

/// Errors produced by the synthesis, channel, DSP and learning layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("aliasing: {what} at {freq_hz} Hz is not below Nyquist ({nyquist_hz} Hz)")]
    Aliasing {
        what: &'static str,
        freq_hz: f64,
        nyquist_hz: f64,
    },

    #[error("axis mismatch: {0}")]
    AxisMismatch(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
