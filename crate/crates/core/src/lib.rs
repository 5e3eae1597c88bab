//! Active subspaces for real-valued functionals on a discretized Hilbert
//! space.
//!
//! The pipeline: draw inputs from a Gaussian measure ([`randfield`]), collect
//! gradients of a functional ([`functionals`]), estimate the active subspace
//! operator through its Gram matrix ([`asm`]), then use the leading
//! eigenfunctions for nearest-neighbor surrogates ([`surrogate`]) and
//! subspace Bayesian optimization ([`bayesopt`]).

// `!(x > 0.0)` is used on purpose so that NaN is rejected as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod asm;
pub mod bayesopt;
pub mod cli;
mod csv;
pub mod error;
pub mod functionals;
pub mod hilbert;
pub mod randfield;
pub mod rng;
pub mod stats;
pub mod surrogate;

pub use error::{Error, Result};
