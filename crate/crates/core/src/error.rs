use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Tensor shapes violate an operation's contract.
    Shape { op: &'static str, detail: String },
    /// An argument is outside the operation's domain.
    InvalidInput(String),
    /// The CTC target cannot be aligned to the available frames.
    InfeasibleTarget { labels: usize, required_frames: usize, frames: usize },
    /// A NaN or infinity appeared; `step` is the optimizer step when known.
    NonFinite { what: &'static str, step: Option<usize> },
    /// Operation invoked on a model or checkpoint in the wrong state.
    State(String),
    /// Random generation gave up after its retry budget.
    Generation(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidInput(detail.into())
    }

    pub(crate) fn state(detail: impl Into<String>) -> Self {
        Error::State(detail.into())
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, detail } => write!(f, "{op}: shape mismatch: {detail}"),
            Error::InvalidInput(detail) => write!(f, "invalid input: {detail}"),
            Error::InfeasibleTarget { labels, required_frames, frames } => write!(
                f,
                "infeasible CTC target: {labels} labels need at least {required_frames} frames, got {frames}"
            ),
            Error::NonFinite { what, step: Some(step) } => {
                write!(f, "non-finite value in {what} at step {step}")
            }
            Error::NonFinite { what, step: None } => write!(f, "non-finite value in {what}"),
            Error::State(detail) => write!(f, "invalid state: {detail}"),
            Error::Generation(detail) => write!(f, "generation failed: {detail}"),
        }
    }
}

impl core::error::Error for Error {}
