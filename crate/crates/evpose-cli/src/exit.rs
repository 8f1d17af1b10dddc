//! Process outcome classification.
//!
//! Every command reports failures through [`anyhow::Error`]; before the
//! process exits, the error chain is inspected once to pick the exit
//! code. Three codes are meaningful to callers: `0` for success, `2`
//! for rejected configuration or malformed input, and `3` for a
//! numeric abort (a non-finite loss stopped training). Anything else —
//! typically an I/O failure — exits `1`.

use crate::config::ConfigError;
use crate::container::FormatError;

/// Successful run.
pub const EXIT_OK: i32 = 0;
/// Unclassified failure, e.g. an I/O error.
pub const EXIT_FAILURE: i32 = 1;
/// Invalid configuration, arguments or input content.
pub const EXIT_VALIDATION: i32 = 2;
/// Training stopped on a non-finite loss.
pub const EXIT_NUMERIC: i32 = 3;

/// Failure classes that carry a dedicated exit code.
///
/// Wrap one of these in `anyhow::Error` (directly or anywhere along a
/// context chain) and [`exit_code`] will find it.
#[derive(Debug)]
pub enum Failure {
    /// The inputs were understood but rejected.
    Validation(String),
    /// A computation produced non-finite values and had to stop.
    Numeric(String),
}

impl core::fmt::Display for Failure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Failure::Validation(msg) => write!(f, "{msg}"),
            Failure::Numeric(msg) => write!(f, "numeric abort: {msg}"),
        }
    }
}

impl std::error::Error for Failure {}

/// Shorthand for failing with a [`Failure::Validation`].
pub fn validation_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Failure::Validation(msg.into()))
}

/// Shorthand for failing with a [`Failure::Numeric`].
pub fn numeric_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Failure::Numeric(msg.into()))
}

/// Maps an error chain to the process exit code.
///
/// Configuration and file-format errors count as validation failures
/// wherever they sit in the chain; an explicit [`Failure`] wins over
/// the generic fallback.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(failure) = cause.downcast_ref::<Failure>() {
            return match failure {
                Failure::Validation(_) => EXIT_VALIDATION,
                Failure::Numeric(_) => EXIT_NUMERIC,
            };
        }
        if cause.downcast_ref::<ConfigError>().is_some()
            || cause.downcast_ref::<FormatError>().is_some()
        {
            return EXIT_VALIDATION;
        }
    }
    EXIT_FAILURE
}

#[cfg(test)]
mod tests {
    use super::*;
    use anyhow::Context;

    #[test]
    fn failures_map_to_their_codes() {
        assert_eq!(exit_code(&validation_err("bad")), EXIT_VALIDATION);
        assert_eq!(exit_code(&numeric_err("nan")), EXIT_NUMERIC);
        assert_eq!(exit_code(&anyhow::anyhow!("disk on fire")), EXIT_FAILURE);
    }

    #[test]
    fn classification_sees_through_context() {
        let err: anyhow::Error =
            Err::<(), _>(validation_err("bad field")).context("loading run config").unwrap_err();
        assert_eq!(exit_code(&err), EXIT_VALIDATION);
    }
}
