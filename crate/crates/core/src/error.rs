use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("configuration mismatch: checkpoint has {found}, current model is {expected}")]
    ConfigMismatch { expected: String, found: String },
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("non-finite prediction {value} at rollout step {step}")]
    NonFinitePrediction { step: usize, value: f64 },
    #[error(
        "integration unstable at t={time}: trace deviates by {deviation:e}; use more internal substeps"
    )]
    Integration { time: f64, deviation: f64 },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
}

pub type Result<T> = core::result::Result<T, Error>;
