//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by volume, geometry, loss, and training operations.
#[derive(Debug, Error)]
pub enum Error {
    /// A voxel index fell outside the grid dimensions.
    #[error("index error: {0}")]
    Index(String),

    /// Two operands disagree on shape, or an operand has an illegal shape.
    #[error("shape error: {0}")]
    Shape(String),

    /// A serialized volume is malformed. `offset` is the byte position of
    /// the first inconsistency.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// TSDF encoding was asked to run on a scene with no surface voxels.
    #[error("empty scene: no surface voxels")]
    EmptyScene,

    /// A classwise operation was given the empty (0) or ignore (255) class.
    #[error("invalid class {0}: classwise operations require a semantic class")]
    InvalidClass(u8),

    /// A numeric argument fell outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called before its prerequisites were produced.
    #[error("state error: {0}")]
    State(String),

    /// Procedural scene generation could not satisfy its constraints.
    #[error("generation error: {0}")]
    Generation(String),

    /// A metric was evaluated over an empty voxel set.
    #[error("empty evaluation mask")]
    EmptyEval,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
