use std::io;

use thiserror::Error;

/// Every failure the engine can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("index {index:?} out of range for dims {dims}")]
    Index { index: [usize; 4], dims: crate::tensor::Dims },

    #[error("invalid label {label} for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    State(String),

    /// Architecture string could not be parsed. `offset` is a character offset.
    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    /// Shape inference failed at layer `layer` (0-based, after group expansion).
    #[error("shape error at layer {layer} ({token}): {message}")]
    Shape { layer: usize, token: String, message: String },

    /// Malformed text input (manifest, config). `line` is 1-based.
    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    /// Training produced a NaN or infinite loss.
    #[error("non-finite loss at iteration {iteration}")]
    NonFinite { iteration: u64 },

    #[error("image decode error: {0}")]
    Image(String),

    #[error("checkpoint load error: {0}")]
    Load(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
