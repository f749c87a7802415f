//! Neural stochastic differential equations trained as continuous-time
//! Wasserstein GANs.
//!
//! The generator is a neural SDE driven by Brownian motion; the
//! discriminator is a neural controlled differential equation reading the
//! generated (or interpolated real) path. Both are solved on a fixed grid
//! and differentiated by backpropagating through the solver steps.

pub mod autodiff;
pub mod config;
pub mod datasets;
pub mod error;
pub mod eval;
pub mod gan;
pub mod gradcheck;
pub mod nn;
pub mod noise;
pub mod paths;
pub mod sdesolve;
pub mod signature;

pub use error::{Error, Result};
