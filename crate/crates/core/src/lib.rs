//! Unfitted discontinuous Galerkin solver for a coupled bulk-interface
//! convection-diffusion problem with macro-element stabilization.

pub mod active;
pub mod assembly;
pub mod discretization;
pub mod driver;
pub mod geometry;
pub mod linalg;
pub mod macro_partition;
pub mod mesh;
pub mod problem;
pub mod quadrature;
pub mod verification;
