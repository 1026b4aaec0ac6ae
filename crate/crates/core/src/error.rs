//! Error type shared by all numerical operations.

use alloc::string::String;
use core::fmt;

/// Errors produced by trajectory, simulation, reconstruction and network
/// operations. IO-level errors live in the companion crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter failed validation (non-positive count, odd kernel, ...).
    InvalidParameter(String),
    /// Two arrays that must be aligned have different shapes or lengths.
    ShapeMismatch(String),
    /// A direct-sum oracle was asked to do more work than its guard allows.
    SizeGuard { cost: u128, limit: u128 },
    /// Non-finite values where finite ones are required.
    NonFinite(&'static str),
    /// Training produced a non-finite loss or gradient.
    Divergence(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::SizeGuard { cost, limit } => {
                write!(f, "size guard: cost {cost} exceeds limit {limit}")
            }
            Error::NonFinite(what) => write!(f, "non-finite values in {what}"),
            Error::Divergence(msg) => write!(f, "training diverged: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl fmt::Display) -> Error {
    Error::InvalidParameter(alloc::format!("{msg}"))
}

pub(crate) fn mismatch(msg: impl fmt::Display) -> Error {
    Error::ShapeMismatch(alloc::format!("{msg}"))
}
