//! Mass of asymptotically hyperbolic metrics.
//!
//! The crate evaluates charge integrals of a metric perturbation `e = g - b`
//! over hyperbolic space `b` in three formulations (cutoff charge, sphere
//! integral, Ricci charge) and projects them onto lapse functions and
//! Laplace eigenfunctions to recover the mass vector and mass aspect.
//!
//! Tensor components returned by the public API are expressed in the
//! `b`-orthonormal frame `E_i = rho * d/dx^i` of the ball chart unless a
//! function states otherwise.

pub mod charges;
pub mod chartlab;
pub mod cli;
pub mod eigenfunctions;
pub mod error;
pub mod fd;
pub mod geometry;
pub mod quad;
pub mod tensorcalc;

pub use error::{Error, Result};
