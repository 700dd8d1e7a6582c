use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::OnceLock;

use capmono_core::levelset::LevelSets;
use capmono_core::metrics::ConformalMetric;
use capmono_core::potential::{GridOptions, GridPotential};

/// Flat exterior of the unit ball: `u = 1 − 1/r`, `C = 1`.
fn flat() -> &'static GridPotential {
    static GRID: OnceLock<GridPotential> = OnceLock::new();
    GRID.get_or_init(|| {
        let metric = ConformalMetric::parse_radial("1", &HashMap::new(), 1.0).unwrap();
        GridPotential::solve(&metric, GridOptions::new(8.0, 0.125), None).unwrap()
    })
}

#[test]
fn flat_capacity_and_maximum_principle() {
    let g = flat();
    assert!((g.c_flux - 1.0).abs() < 0.01, "{}", g.c_flux);
    assert!((g.c_energy - 1.0).abs() < 0.01, "{}", g.c_energy);
    let (lo, hi, ok) = g.maximum_principle();
    assert!(ok && lo > 0.0 && hi < 1.0, "{lo} {hi}");
}

#[test]
fn flat_level_set_is_the_radius_two_sphere() {
    let ls = LevelSets::new(flat());
    let mesh = ls.extract(0.5).unwrap();
    assert_eq!(mesh.components, 1);
    assert_eq!(mesh.multiplicity, 8);
    let (s, _) = ls.integrals(&mesh).unwrap();
    assert!((s.area / (16.0 * PI) - 1.0).abs() < 0.03, "area {}", s.area);
    assert!((mesh.flat_area() / (16.0 * PI) - 1.0).abs() < 0.03);
    // |∇u| = 1/4 and H = 1 on r = 2.
    assert!((s.i2 / PI - 1.0).abs() < 0.03, "I2 {}", s.i2);
    assert!((s.ih / (4.0 * PI) - 1.0).abs() < 0.03, "IH {}", s.ih);
    assert!((s.t - 1.5 * flat().c_flux).abs() < 1e-9);
    assert!(s.regularity().regular);
}

#[test]
fn levels_outside_the_open_range_are_rejected() {
    let ls = LevelSets::new(flat());
    assert!(ls.extract(0.0).is_err());
    assert!(ls.extract(-0.1).is_err());
    assert!(ls.extract(flat().min_outer_value()).is_err());
}

#[test]
fn boundary_moments_of_the_unit_sphere() {
    let ls = LevelSets::new(flat());
    let (s, points) = ls.boundary_integrals(24).unwrap();
    assert_eq!(points.len(), 24 * 48);
    assert!((s.area - 4.0 * PI).abs() < 1e-10, "area {}", s.area);
    // |∇u| = 1, H = 2.
    assert!((s.i2 / (4.0 * PI) - 1.0).abs() < 0.02, "I2 {}", s.i2);
    assert!((s.ih / (8.0 * PI) - 1.0).abs() < 0.02, "IH {}", s.ih);
    assert!((s.ih2 - 16.0 * PI).abs() < 1e-9, "IH2 {}", s.ih2);
    assert_eq!(s.level, 0.0);
    assert!((s.t - 0.5 * flat().c_flux).abs() < 1e-12);
}

#[test]
fn off_export_lists_every_vertex_and_face() {
    let mesh = LevelSets::new(flat()).extract(0.5).unwrap();
    let mut out = Vec::new();
    mesh.write_off(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("OFF"));
    let counts: Vec<usize> = lines.next().unwrap().split(' ').map(|x| x.parse().unwrap()).collect();
    assert_eq!(counts, [mesh.vertices.len(), mesh.triangles.len(), 0]);
    let rest: Vec<&str> = lines.collect();
    assert_eq!(rest.len(), counts[0] + counts[1]);
    assert!(rest[counts[0]..].iter().all(|l| l.starts_with("3 ")));
    for l in &rest[..counts[0]] {
        let r: f64 = l.split(' ').map(|x| x.parse::<f64>().unwrap().powi(2)).sum::<f64>().sqrt();
        assert!((r - 2.0).abs() < 0.05, "vertex at radius {r}");
    }
}

#[test]
fn solves_are_bit_identical() {
    let metric = ConformalMetric::schwarzschild(1.0).unwrap();
    let opts = GridOptions::new(4.0, 0.125);
    let a = GridPotential::solve(&metric, opts, None).unwrap();
    let b = GridPotential::solve(&metric, opts, None).unwrap();
    assert_eq!(a.u, b.u);
    assert_eq!(a.c_flux.to_bits(), b.c_flux.to_bits());
}
