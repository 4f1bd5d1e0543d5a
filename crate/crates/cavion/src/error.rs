use alloc::string::String;
use core::fmt;

/// Errors produced by simulation and estimation routines.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter violated a documented precondition.
    InvalidParameter(String),
    /// The plano-concave resonator is geometrically unstable (L >= R).
    UnstableResonator { length_um: f64, roc_um: f64 },
    /// Input data unusable for the requested estimate.
    InvalidData(String),
    /// More trials requested than the 32-bit trial index can address.
    TrialIndexOverflow(u64),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::UnstableResonator { length_um, roc_um } => write!(
                f,
                "unstable resonator: length {length_um} um must be below the radius of curvature {roc_um} um"
            ),
            Error::InvalidData(msg) => write!(f, "invalid data: {msg}"),
            Error::TrialIndexOverflow(n) => {
                write!(f, "{n} trials exceed the 32-bit trial index range")
            }
        }
    }
}

impl core::error::Error for Error {}
