//! Capacitary potential: `Δu = 0` outside the boundary, `u = 0` on it and
//! `u → 1` at infinity.

pub mod grid;
pub mod radial;

pub use grid::{GridOptions, GridPotential};
pub use radial::{Capacity, FakeDistance, RadialPotential};
