//! Error type shared by every module of the crate.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors emitted by tensors, models, datasets, attacks, and file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty tensor")]
    EmptyTensor,

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },

    #[error("class {class} has {available} examples, need {needed}")]
    InsufficientClass {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error(
        "could not place {classes} cluster centers at pairwise distance >= {min_distance} \
         after {attempts} attempts; increase dim or decrease margin"
    )]
    CenterPlacement {
        classes: usize,
        min_distance: f64,
        attempts: usize,
    },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("parse error at byte {offset}: {what}")]
    Parse { offset: usize, what: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
