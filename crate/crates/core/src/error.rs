use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("insufficient data: need at least {needed} transitions, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("member index {index} out of range for ensemble of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("action lies on the squashing boundary (log-probability is -inf)")]
    BoundaryAction,
    #[error("all {0} imaginary rollouts diverged")]
    AllRolloutsDiverged(usize),
    #[error("empty trajectory set")]
    EmptyTrajectories,
    #[error("no usable ensemble member")]
    NoUsableMembers,
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
