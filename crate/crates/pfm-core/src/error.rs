use alloc::string::String;
use core::fmt;

/// Errors surfaced by fallible operations in this crate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Tensor or channel shapes do not line up.
    Shape(String),
    /// An argument is outside the supported domain (bad bank size,
    /// unknown subset name, non-negative switch factor, ...).
    Invalid(String),
    /// `backward` was called on a tensor that is not a scalar.
    NonScalarLoss { numel: usize },
    /// Training produced a non-finite loss.
    Diverged { epoch: usize },
    /// A numeric check could not decide (degenerate inputs).
    Inconclusive(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape error: {msg}"),
            Error::Invalid(msg) => write!(f, "invalid argument: {msg}"),
            Error::NonScalarLoss { numel } => {
                write!(f, "backward requires a scalar loss, got {numel} elements")
            }
            Error::Diverged { epoch } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}")
            }
            Error::Inconclusive(msg) => write!(f, "inconclusive: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
