//! Verification toolkit for negative association on generalized Orlicz balls.
//!
//! The crate represents Orlicz-based densities `m(Σ fᵢ(xᵢ))·Π wᵢ(xᵢ)` on the
//! nonnegative orthant, evaluates the integrals appearing in the
//! negative-association argument by adaptive quadrature (dimension ≤ 4) or by
//! sampling, and runs the planar localization bisection as an algorithm.

pub mod error;
pub mod generate;
pub mod localization;
pub mod model;
pub mod na;
pub mod quadrature;
pub mod report;
pub mod sampler;
pub mod scalar;
pub mod spanned;
pub mod testfn;
pub mod theta;

pub use error::{Error, Result};
