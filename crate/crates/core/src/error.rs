use alloc::boxed::Box;
use alloc::string::String;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time {0} lies outside [0, 1]")]
    Domain(f64),

    #[error("evaluation grid is empty")]
    EmptyGrid,

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("loading matrix is numerically rank deficient: rank {rank} of {cols} columns")]
    RankDeficient { rank: usize, cols: usize },

    #[error("variance at index {index} is not strictly positive ({value})")]
    NonPositiveVariance { index: usize, value: f64 },

    #[error("posterior precision for {block} is not positive definite (diagonal range {min_diag:e}..{max_diag:e})")]
    NotPositiveDefinite {
        block: &'static str,
        min_diag: f64,
        max_diag: f64,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("held-out index out of range: {0}")]
    HeldOut(String),

    #[error("chain has no usable samples")]
    EmptyChain,

    #[error("iteration {iteration}, block {block}: {source}")]
    Sweep {
        iteration: usize,
        block: &'static str,
        source: Box<Error>,
    },
}
