//! Numerical toolkit for capacitary potentials on asymptotically flat
//! 3-manifolds.
//!
//! The pipeline is: describe a metric ([`metrics`]), solve for the
//! capacitary potential ([`potential`]), sample its level sets
//! ([`levelset`]), evaluate the monotone functionals along them
//! ([`functionals`]) and audit the resulting geometric inequalities
//! ([`inequalities`]).

pub mod error;
pub mod expr;
pub mod functionals;
pub mod inequalities;
pub mod levelset;
pub mod metrics;
pub mod potential;
pub mod quad;

pub use error::{Error, Result};
pub use expr::Expr;
