//! Discontinuous Petrov-Galerkin discretizations of Poisson, Stokes and
//! linearized Navier-Stokes with a geometric multigrid preconditioned
//! conjugate gradient solver.

pub mod assembly;
pub mod basis;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod krylov;
pub mod formulation;
pub mod mesh;
pub mod multigrid;
pub mod sparse;

pub use error::{Error, Result};
