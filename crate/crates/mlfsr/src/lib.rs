//! Mamba-style 4D light-field super-resolution on the CPU.
//!
//! The crate is organized around a small reverse-mode tensor engine
//! ([`tensor`]), the selective state-space scan kernels ([`scan`]), the
//! light-field data model and subspace tokenizations ([`lf`]), a procedural
//! light-field generator with known epipolar geometry ([`synth`]), the
//! network itself ([`model`]), the training harness ([`train`]), and
//! evaluation / benchmarking ([`eval`]).

pub mod eval;
pub mod lf;
pub mod model;
pub mod scan;
pub mod synth;
pub mod tensor;
pub mod train;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("backward pass requires a scalar loss, got shape {0}")]
    NonScalarLoss(String),
    #[error("NaN gradient in parameter {0}")]
    NanGradient(String),
    #[error("phase 2 requires a teacher checkpoint (train the teacher first, then pass it via --teacher)")]
    MissingTeacher,
    #[error("{0}")]
    Contract(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
