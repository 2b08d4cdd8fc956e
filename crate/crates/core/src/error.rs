use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("layer {layer} ({kind}): expected input shape {expected:?}, got {actual:?}")]
    ShapeMismatch {
        layer: usize,
        kind: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("tensor shape {shape:?} needs {expected} values, got {actual}")]
    BadTensor {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },

    #[error("trace does not belong to this network: {0}")]
    TraceMismatch(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("annotation point ({x}, {y}) lies outside a {width}x{height} image")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: usize },

    #[error("image {width}x{height} cannot be tiled with {tile}x{tile} tiles")]
    NotTileable {
        width: usize,
        height: usize,
        tile: usize,
    },

    #[error("cell placement failed: placed {placed} of {requested} cells")]
    Placement { placed: usize, requested: usize },

    #[error("unknown modality {0:?} (expected \"phase-contrast\" or \"direct\")")]
    UnknownModality(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    /// Whether the failure is numeric rather than caused by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
