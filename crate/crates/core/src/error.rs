//! Crate-wide error type and result alias.

use thiserror::Error;

/// Errors produced by any flsim component.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration; names the offending key where possible.
    #[error("config error: {0}")]
    Config(String),

    /// Input outside an operation's domain (range, emptiness, sign).
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor/vector dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// CSV parse failure with location.
    #[error("parse error in {path} at row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    /// Fixed-point encoding overflow or non-finite input.
    #[error("encoding error: {0}")]
    Encoding(String),

    /// Malformed or undecryptable ciphertext.
    #[error("decryption error: {0}")]
    Decryption(String),

    /// Numeric failure during training (NaN/Inf loss).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Protocol-level mismatch between client updates and server state.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;
