//! Spectrum-preserving reparameterized training.
//!
//! Each weight matrix `W` is kept at its random initialization and trained
//! indirectly through two orthogonal factors, `W_eff = R W P`, so the
//! singular-value spectrum of the weight never moves. The factors are learned
//! through cheap stochastic primitives (a small re-orthogonalized block
//! embedded in the identity, or a permuted block-diagonal), parameterized by
//! a truncated Cayley-Neumann series and folded into `W` on a fixed cadence.
//!
//! The crate is generic over the scalar type; the aliases below pin the
//! default `f64` precision used by the CLI and the diagnostics suite.

pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod linalg;
pub mod metrics;
pub mod ortho;
pub mod poetlayer;
pub mod randinit;
pub mod rng;
pub mod scalar;
pub mod spo;
pub mod threads;
pub mod trainer;

pub use linalg::{DenseMatrix, PermutationSpec, Side, SvdResult};
pub use scalar::Scalar;

/// Default-precision dense matrix.
pub type Mat64 = DenseMatrix<f64>;
/// Single-precision dense matrix.
pub type Mat32 = DenseMatrix<f32>;
/// Default-precision SVD result.
pub type Svd64 = SvdResult<f64>;
