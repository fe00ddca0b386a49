//! Numerical probes for ellipticity of anisotropic integrands on the
//! Grassmannian of m-planes in ℝᴺ.
//!
//! Integrands are functions of the orthogonal projection onto a plane.
//! The crate estimates the ellipticity constants of such integrands by
//! deterministic sampling, checks the rank conditions on measures of planes,
//! and runs regularity diagnostics on discretized graphs.

pub mod conditions;
pub mod error;
pub mod graph_energy;
pub mod grassmann;
pub mod integrand;
pub mod linalg;
pub mod nelder_mead;
pub mod pluecker4;
pub mod report;
pub mod sampling;

pub use error::{Error, Result};
pub use grassmann::{Dims, Plane};
pub use integrand::Integrand;
