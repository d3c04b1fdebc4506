//! Graph connection Laplacians on epsilon-nets of model Riemannian manifolds.
//!
//! The crate builds epsilon-nets with Voronoi measures on a circle, a flat
//! torus or a round 2-sphere, assembles the discrete rho-connection Laplacian
//! of a bundle with closed-form parallel transport, computes its low spectrum
//! with a block Lanczos solver, and compares the result with the analytic
//! spectrum of the connection Laplacian.

pub mod bundles;
pub mod eigensolver;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod nets;
pub mod operator;
pub mod rng;

pub use error::{Error, Result};
