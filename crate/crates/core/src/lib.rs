//! Bayesian time-aligned common and individual factor analysis (TACIFA) for
//! pairs of multivariate time series.
//!
//! A pair of `p`-dimensional series `X` (observed on `T₁` times) and `Y`
//! (observed on `T₂` times) is decomposed as
//!
//! ```text
//! X_t = ΨΓ₁ζ₁(t) + ΛΞ₁η(t)    + ε₁ₜ
//! Y_t = ΨΓ₂ζ₂(t) + ΛΞ₂η(M(t)) + ε₂ₜ
//! ```
//!
//! where `Ψ = I − Λ(ΛᵀΛ)⁻¹Λᵀ` keeps the individual-specific loadings orthogonal
//! to the shared space, all latent curves are B-spline expansions and `M` is a
//! monotone warping of `[0, 1]` onto itself. Inference runs a hybrid
//! Gibbs / Hamiltonian Monte Carlo sampler ([`sampler::run_chain`]); the chain
//! is post-processed by successive Procrustes rotations
//! ([`postprocess::align_chain`]) before computing importance scores, the
//! `Syn` similarity and posterior predictive summaries.
//!
//! The crate is `no_std` and only needs an allocator. File formats and the
//! command-line interface live in the `tacifa` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod basis;
pub mod error;
pub mod math;
pub mod model;
pub mod postprocess;
pub mod sampler;
pub mod simgen;
pub mod warp;

pub use basis::BSplineBasis;
pub use error::{Error, Result};
pub use model::{Design, HyperParams, ModelState, SeriesPair, ShrinkageState};
pub use postprocess::PosteriorSummary;
pub use sampler::{Chain, McmcConfig};
pub use warp::WarpParams;
