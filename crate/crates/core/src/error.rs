use thiserror::Error;

/// Errors raised while building or solving admission-control models.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("value outside domain: {0}")]
    Domain(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("models are structurally incompatible: {0}")]
    Structure(String),

    #[error("non-finite value encountered: {0}")]
    Numeric(String),

    #[error("expected stages to completion is infinite from step {step}")]
    InfiniteExpectation { step: usize },

    #[error(
        "model with {states} states and {actions} actions needs about {required_bytes} bytes, \
         above the configured cap of {cap_bytes} bytes"
    )]
    Capacity {
        states: usize,
        actions: usize,
        required_bytes: u64,
        cap_bytes: u64,
    },

    #[error("scenario file: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn validation(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

pub(crate) fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Validation(msg()))
    }
}
