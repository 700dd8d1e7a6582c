//! Level sets `Σ_t = {ρ = t}` of the potential and their moments.
//!
//! Radial level sets are coordinate spheres and every moment is closed
//! form. Lattice level sets are extracted by marching cubes ([`mc`]) and
//! integrated over the mesh ([`surface`]).

pub mod mc;
pub mod surface;

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::Result;
use crate::potential::radial::RadialPotential;

pub use mc::TriMesh;
pub use surface::{extract_isosurface, surface_integrals, CentroidSample, LevelSets};

/// `ε_crit` as a fraction of the median `|∇u|` over a level set.
pub const EPS_CRIT_RELATIVE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelSetSample {
    pub t: f64,
    pub level: f64,
    pub area: f64,
    /// `∫ |∇u|² dσ`
    #[serde(rename = "I2")]
    pub i2: f64,
    /// `∫ |∇u| H dσ`
    #[serde(rename = "IH")]
    pub ih: f64,
    /// `∫ H² dσ`
    #[serde(rename = "IH2")]
    pub ih2: f64,
    pub components: usize,
    pub min_grad: f64,
    pub eps_crit: f64,
    /// Fraction of quadrature points with `|∇u| ≤ ε_crit`.
    pub critical_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Regularity {
    pub regular: bool,
    pub connected: bool,
    /// Regular but disconnected: the topological hypothesis fails and no
    /// monotonicity claim may be made.
    pub topology_violation: bool,
}

impl LevelSetSample {
    pub fn regularity(&self) -> Regularity {
        let regular = self.min_grad > self.eps_crit && self.min_grad > 0.0;
        let connected = self.components == 1;
        Regularity { regular, connected, topology_violation: regular && !connected }
    }
}

/// Closed-form moments of `Σ_t` for a radial potential.
pub fn sample_radial(pot: &RadialPotential, t: f64) -> Result<LevelSetSample> {
    let r = pot.level_radius(t)?;
    let p = pot.metric.point(r)?;
    let c = pot.c;
    let grad = c / (p.f * p.f);
    let h = p.mean_curvature();
    let area = p.area();
    Ok(LevelSetSample {
        t,
        level: pot.fake().level(t)?,
        area,
        i2: 4.0 * PI * c * c / (p.f * p.f),
        ih: 4.0 * PI * c * h,
        ih2: h * h * area,
        components: 1,
        min_grad: grad,
        eps_crit: EPS_CRIT_RELATIVE * grad,
        critical_fraction: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RadialMetric;
    use std::collections::HashMap;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-10 * b.abs().max(1.0)
    }

    #[test]
    fn flat_samples() {
        let pot = RadialPotential::solve(&RadialMetric::flat(1.0).unwrap(), 1e-13).unwrap();
        let s = sample_radial(&pot, 0.5).unwrap();
        assert!(close(s.area, 4.0 * PI) && close(s.i2, 4.0 * PI) && close(s.ih, 8.0 * PI) && close(s.ih2, 16.0 * PI));
        let s = sample_radial(&pot, 1.5).unwrap();
        assert!(close(s.area, 16.0 * PI) && close(s.i2, PI) && close(s.ih, 4.0 * PI));
        let reg = s.regularity();
        assert!(reg.regular && reg.connected && !reg.topology_violation);
    }

    #[test]
    fn schwarzschild_boundary_sample() {
        let p = HashMap::from([("m".to_string(), 1.0)]);
        let m = RadialMetric::parse("(1 + m/(2*r))^4", "r*(1 + m/(2*r))^2", &p, 0.5).unwrap();
        let pot = RadialPotential::solve(&m, 1e-13).unwrap();
        let s = sample_radial(&pot, 0.5 * pot.c).unwrap();
        assert!(close(s.area, 16.0 * PI) && close(s.i2, PI));
        assert!(s.ih.abs() < 1e-12);
    }

    #[test]
    fn regularity_flags() {
        let base = LevelSetSample {
            t: 1.0,
            level: 0.5,
            area: 1.0,
            i2: 1.0,
            ih: 1.0,
            ih2: 1.0,
            components: 2,
            min_grad: 1.0,
            eps_crit: 1e-3,
            critical_fraction: 0.0,
        };
        assert!(base.regularity().topology_violation);
        let critical = LevelSetSample { components: 1, min_grad: 0.0, ..base };
        let r = critical.regularity();
        assert!(!r.regular && r.connected && !r.topology_violation);
    }
}
