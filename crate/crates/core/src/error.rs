//! Shared parse-level errors. Domain modules define their own error enums.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("BadHex: not valid hexadecimal: {0:?}")]
    BadHex(String),
    #[error("BadLength: expected {expected} bytes in {value:?}")]
    BadLength { expected: usize, value: String },
    #[error("BadPath: malformed key path step: {0:?}")]
    BadPath(String),
    #[error("BadRational: expected `num/den` with positive denominator: {0:?}")]
    BadRational(String),
}
