//! Numerical solvers for stationary heat conduction in pinned anharmonic
//! lattices: the closure and kinetic collision operators, their
//! linearization and zero modes, the hydrodynamic and kinetic boundary-value
//! problems for temperature profiles, and direct Langevin simulation of the
//! microscopic chain with an exact harmonic reference.

pub mod collision;
pub mod correlators;
pub mod error;
pub mod export;
pub mod langevin;
pub mod lattice;
pub mod linear_ops;
mod par;
pub mod transport;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
