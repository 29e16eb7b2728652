//! Nonlinear collision operators.
//!
//! [`KineticCollision`] is the four-phonon operator of the kinetic limit on
//! the fast grid; [`closure`] evaluates the finite-N closure term on the
//! pair-momentum lattice.

pub mod closure;
mod kinetic;

pub use closure::{closure_term, ClosureBlocks, ClosureConfig, ClosureEvaluator};
pub use kinetic::{equilibrium_field, BracketVariant, CollisionConfig, KineticCollision, KINETIC_PREFACTOR};

/// Kinetic coupling `R = Nλ²` held fixed in the scaling limit.
pub fn scaling_transfer(lambda: f64, n: usize) -> f64 {
    n as f64 * lambda * lambda
}
