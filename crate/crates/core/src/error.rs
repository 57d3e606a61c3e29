use std::path::PathBuf;

use thiserror::Error;

use crate::painting::{Painting, StrokeId};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, got {actual:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("non-finite gradient for stroke {stroke_id}")]
    NonFiniteGradient { stroke_id: StrokeId },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss {
        iteration: usize,
        /// Last painting whose loss was finite.
        checkpoint: Box<Painting>,
    },

    #[error("mask file missing: {0}")]
    MissingMask(PathBuf),

    #[error("duplicate region id {0}")]
    DuplicateRegionId(u32),

    #[error("stroke {0} has no region assignment")]
    UnclassifiedStroke(StrokeId),

    #[error("reference image has degenerate texture (contrast {contrast}, entropy {entropy})")]
    DegenerateReference { contrast: f64, entropy: f64 },

    #[error("empty sequence")]
    EmptySequence,

    #[error("invalid value: {0}")]
    Invalid(String),

    #[error("unsupported schema version {0}")]
    SchemaVersion(u32),

    #[error("image codec: {0}")]
    Codec(#[from] ::image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
