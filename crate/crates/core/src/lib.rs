//! Variance-stabilized local linear regression by convex combinations of
//! skewed local linear fits.
//!
//! The crate is organised bottom-up:
//!
//! - [`kernels`]: kernel densities and their integrals.
//! - [`vtheory`]: the variance factor `V(λ)`, its extrema and the ζ solvers.
//! - [`scenario`]: analytic test problems and the `γ*(x)` profile.
//! - [`selection`]: the bias coefficient and the eight bandwidth/weight rules.
//! - [`estimators`]: local linear, skewed and convex-combination fits.
//! - [`sim`]: the seeded Monte Carlo harness.
//! - [`cli`]: the command-line front end.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod kernels;
pub mod numeric;
pub mod scenario;
pub mod selection;
pub mod sim;
pub mod vtheory;

pub use error::{Error, Result};
pub use kernels::{KernelFamily, KernelSpec};
