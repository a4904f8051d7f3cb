//! Error type shared across the crate.

use alloc::string::String;
use core::fmt;

/// Crate-wide result alias.
pub type Result<T> = core::result::Result<T, Error>;

/// Failure classes for tensor ops, model construction, and reasoning runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Error {
    /// Shape or dimension mismatch. Carries the operation name and the
    /// offending shapes.
    Dim { op: &'static str, detail: String },
    /// A caller broke a documented precondition.
    Contract(String),
    /// Invalid configuration value.
    Config(String),
    /// Sequence grew past the model's position capacity.
    Capacity(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dim { op, detail } => write!(f, "dimension error in {op}: {detail}"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Config(msg) => write!(f, "invalid config: {msg}"),
            Error::Capacity(msg) => write!(f, "capacity exceeded: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

/// Shorthand for `Error::Dim` with formatted detail.
#[macro_export]
macro_rules! dim_error {
    ($op:expr, $($arg:tt)*) => {
        $crate::error::Error::Dim { op: $op, detail: $crate::alloc::format!($($arg)*) }
    };
}

/// Shorthand for `Error::Contract` with formatted detail.
#[macro_export]
macro_rules! contract_error {
    ($($arg:tt)*) => {
        $crate::error::Error::Contract($crate::alloc::format!($($arg)*))
    };
}
