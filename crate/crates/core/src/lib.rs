//! Hybrid isogeometric / plane-wave discontinuous Galerkin discretization of
//! periodic full-potential eigenvalue problems.
//!
//! Plane waves cover the interstitial region, tensor B-splines cover small
//! boxes around each nucleus, and a symmetric interior penalty form glues the
//! two across the box faces.

pub mod assembly;
pub mod bspline;
pub mod cache;
pub mod eigensolve;
pub mod error;
pub mod export;
pub mod fftcheb;
pub mod fourier;
pub mod geometry;
pub mod planewave;
pub mod potentials;
pub mod problem;
pub mod scf;
pub mod sparse;
pub mod state;

pub use error::{Error, Result};
