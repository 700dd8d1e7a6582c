//! Moments of lattice level sets.
//!
//! Gradients are central differences at nodes, interpolated trilinearly.
//! The flat mean curvature is the central-difference divergence of the
//! nodal unit normal field, and the conformal change `g = φ⁴δ` gives
//! `|∇u|_g = φ⁻²|∇u|`, `dσ_g = φ⁴ dσ` and `H_g = φ⁻²(H + 4 ∂_ν log φ)`.
//! Moments use one-point (centroid) quadrature per triangle.

use serde::Serialize;

use super::mc::{self, triangle_area, TriMesh};
use super::LevelSetSample;
use crate::error::{Error, Result};
use crate::metrics::sphere_rule;
use crate::potential::grid::{crossing_fraction, GridPotential, NodeKind};
use crate::potential::radial::FakeDistance;

/// Pointwise data at one triangle centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CentroidSample {
    pub position: [f64; 3],
    /// `g`-area of the triangle.
    pub area: f64,
    pub grad: f64,
    pub mean_curvature: f64,
}

/// Lattice potential with ghost values in the first masked layer, ready
/// for differencing and meshing.
pub struct LevelSets<'a> {
    pub grid: &'a GridPotential,
    values: Vec<f64>,
}

const NEIGHBOURS: [(usize, i64); 6] = [(0, 1), (0, -1), (1, 1), (1, -1), (2, 1), (2, -1)];

impl<'a> LevelSets<'a> {
    /// Masked nodes next to the domain take the linear extrapolation of
    /// `u` through its zero at the boundary crossing, averaged over their
    /// unknown neighbours, so that differences straddling the boundary
    /// stay consistent.
    pub fn new(grid: &'a GridPotential) -> Self {
        let n = grid.n as i64;
        let mut values = grid.u.clone();
        let r0 = grid.metric.r0;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let q = grid.index(i as usize, j as usize, k as usize);
                    if grid.kind[q] != NodeKind::Masked {
                        continue;
                    }
                    let (mut sum, mut count) = (0.0, 0);
                    for (axis, dir) in NEIGHBOURS {
                        let mut idx = [i, j, k];
                        idx[axis] += dir;
                        if idx.iter().any(|&c| c < 0 || c >= n) {
                            continue;
                        }
                        let p = grid.index(idx[0] as usize, idx[1] as usize, idx[2] as usize);
                        if grid.kind[p] != NodeKind::Unknown {
                            continue;
                        }
                        let pos = [grid.coord(idx[0] as usize), grid.coord(idx[1] as usize), grid.coord(idx[2] as usize)];
                        let theta = crossing_fraction(pos, axis, -(dir as f64) * grid.h, r0);
                        sum += grid.u[p] * (1.0 - 1.0 / theta);
                        count += 1;
                    }
                    if count > 0 {
                        values[q] = sum / count as f64;
                    }
                }
            }
        }
        LevelSets { grid, values }
    }

    /// Node value with mirror folding and the outer data beyond the box.
    fn value(&self, idx: [i64; 3]) -> f64 {
        let g = self.grid;
        let n = g.n as i64;
        let mut c = idx;
        if g.octant {
            for x in c.iter_mut() {
                *x = x.abs();
            }
        }
        if c.iter().any(|&x| x < 0 || x >= n) {
            let p = [0, 1, 2].map(|a| g.origin + c[a] as f64 * g.h);
            return g.outer_value((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
        }
        self.values[g.index(c[0] as usize, c[1] as usize, c[2] as usize)]
    }

    fn node_grad(&self, idx: [i64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (a, g) in out.iter_mut().enumerate() {
            let (mut p, mut m) = (idx, idx);
            p[a] += 1;
            m[a] -= 1;
            *g = (self.value(p) - self.value(m)) / (2.0 * self.grid.h);
        }
        out
    }

    fn node_normal(&self, idx: [i64; 3]) -> [f64; 3] {
        let g = self.node_grad(idx);
        let len = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        if len == 0.0 {
            [0.0; 3]
        } else {
            g.map(|x| x / len)
        }
    }

    /// Flat divergence of the unit normal field at a node.
    fn node_mean_curvature(&self, idx: [i64; 3]) -> f64 {
        let mut div = 0.0;
        for a in 0..3 {
            let (mut p, mut m) = (idx, idx);
            p[a] += 1;
            m[a] -= 1;
            div += (self.node_normal(p)[a] - self.node_normal(m)[a]) / (2.0 * self.grid.h);
        }
        div
    }

    /// Trilinear interpolation of a nodal quantity at a stored-region point.
    fn interpolate<const K: usize>(&self, p: [f64; 3], node: impl Fn([i64; 3]) -> [f64; K]) -> [f64; K] {
        let g = self.grid;
        let mut base = [0i64; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = (p[a] - g.origin) / g.h;
            let i = (s.floor() as i64).clamp(0, g.n as i64 - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut out = [0.0; K];
        for c in 0..8 {
            let o = [c & 1, (c >> 1) & 1, (c >> 2) & 1];
            let w: f64 = (0..3).map(|a| if o[a] == 1 { frac[a] } else { 1.0 - frac[a] }).product();
            if w == 0.0 {
                continue;
            }
            let v = node([base[0] + o[0] as i64, base[1] + o[1] as i64, base[2] + o[2] as i64]);
            for (acc, x) in out.iter_mut().zip(v) {
                *acc += w * x;
            }
        }
        out
    }

    /// `(|∇u|_g, H_g)` at a stored-region point.
    pub fn pointwise(&self, p: [f64; 3]) -> Result<(f64, f64)> {
        let grad = self.interpolate(p, |i| self.node_grad(i));
        let [h_flat] = self.interpolate(p, |i| [self.node_mean_curvature(i)]);
        let len = (grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]).sqrt();
        let (phi, dphi) = self.grid.metric.phi_grad_at(p)?;
        let dnu = if len > 0.0 { (0..3).map(|a| dphi[a] * grad[a] / len).sum::<f64>() / phi } else { 0.0 };
        let inv2 = 1.0 / (phi * phi);
        Ok((inv2 * len, inv2 * (h_flat + 4.0 * dnu)))
    }

    pub fn extract(&self, level: f64) -> Result<TriMesh> {
        let mut mesh = mc::extract(self.grid, &self.values, level)?;
        let mut grad = Vec::with_capacity(mesh.vertices.len());
        let mut mean = Vec::with_capacity(mesh.vertices.len());
        for &v in &mesh.vertices {
            let (g, h) = self.pointwise(v)?;
            grad.push(g);
            mean.push(h);
        }
        mesh.grad = grad;
        mesh.mean_curvature = mean;
        Ok(mesh)
    }

    /// Centroid data of every stored triangle, in triangle order.
    pub fn centroids(&self, mesh: &TriMesh) -> Result<Vec<CentroidSample>> {
        mesh.triangles
            .iter()
            .map(|t| {
                let p = t.map(|v| mesh.vertices[v as usize]);
                let c = [0, 1, 2].map(|a| (p[0][a] + p[1][a] + p[2][a]) / 3.0);
                let phi = self.grid.metric.phi_at(c)?;
                let (grad, mean_curvature) = self.pointwise(c)?;
                Ok(CentroidSample { position: c, area: triangle_area(p) * phi.powi(4), grad, mean_curvature })
            })
            .collect()
    }

    /// Moments of the level set, with `t` from the lattice flux capacity.
    pub fn integrals(&self, mesh: &TriMesh) -> Result<(LevelSetSample, Vec<CentroidSample>)> {
        let data = self.centroids(mesh)?;
        let t = FakeDistance { c: self.grid.c_flux }.of_level(mesh.level)?;
        let sample = moments(&data, mesh.multiplicity as f64, mesh.components, t, mesh.level);
        Ok((sample, data))
    }

    /// Moments of `∂M = {|x| = r0}` by a product rule with `n` polar nodes
    /// on the coordinate sphere. The boundary is exactly that sphere, so
    /// its normal is radial and `H_flat = 2/r0`. Differencing `u` across
    /// the cut cells is too noisy for `|∇u|` itself, so only its angular
    /// profile comes from the lattice (a one-sided polynomial through
    /// `u(r0) = 0` and interpolated values at `r0 + 2h, 3h, 4h`, whose
    /// cells lie wholly outside the boundary); its scale is fixed by the
    /// flux identity `∫|∇u| dσ = 4πC` with the lattice flux capacity.
    /// The pointwise samples feed the boundary-condition checks.
    pub fn boundary_integrals(&self, n: usize) -> Result<(LevelSetSample, Vec<CentroidSample>)> {
        let g = self.grid;
        let r0 = g.metric.r0;
        let h = g.h;
        let mut data = sphere_rule(n)
            .into_iter()
            .map(|(d, w)| {
                let p = d.map(|x| r0 * x);
                let (phi, dphi) = g.metric.phi_grad_at(p)?;
                let at = |s: f64| g.interpolate(d.map(|x| (r0 + s) * x)) / s;
                // u(s)/s = a + b s + c s², so a from three divided values.
                let (q2, q3, q4) = (at(2.0 * h), at(3.0 * h), at(4.0 * h));
                let du = 6.0 * q2 - 8.0 * q3 + 3.0 * q4;
                let dnu = (0..3).map(|a| dphi[a] * d[a]).sum::<f64>() / phi;
                let inv2 = 1.0 / (phi * phi);
                Ok(CentroidSample {
                    position: p,
                    area: w * r0 * r0 * phi.powi(4),
                    grad: inv2 * du,
                    mean_curvature: inv2 * (2.0 / r0 + 4.0 * dnu),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let flux: f64 = data.iter().map(|d| d.area * d.grad).sum();
        if !(flux > 0.0) {
            return Err(Error::Solver(format!("boundary flux {flux} is not positive")));
        }
        let scale = 4.0 * std::f64::consts::PI * g.c_flux / flux;
        for d in &mut data {
            d.grad *= scale;
        }
        Ok((moments(&data, 1.0, 1, 0.5 * g.c_flux, 0.0), data))
    }
}

fn moments(data: &[CentroidSample], k: f64, components: usize, t: f64, level: f64) -> LevelSetSample {
    let (mut area, mut i2, mut ih, mut ih2) = (0.0, 0.0, 0.0, 0.0);
    let mut min_grad = f64::INFINITY;
    for d in data {
        area += d.area;
        i2 += d.area * d.grad * d.grad;
        ih += d.area * d.grad * d.mean_curvature;
        ih2 += d.area * d.mean_curvature * d.mean_curvature;
        min_grad = min_grad.min(d.grad);
    }
    let mut grads: Vec<f64> = data.iter().map(|d| d.grad).collect();
    grads.sort_by(f64::total_cmp);
    let median = if grads.is_empty() { 0.0 } else { grads[grads.len() / 2] };
    let eps_crit = super::EPS_CRIT_RELATIVE * median;
    let below = grads.iter().filter(|&&g| g <= eps_crit).count();
    let critical_fraction = if grads.is_empty() { 1.0 } else { below as f64 / grads.len() as f64 };
    LevelSetSample {
        t,
        level,
        area: k * area,
        i2: k * i2,
        ih: k * ih,
        ih2: k * ih2,
        components,
        min_grad,
        eps_crit,
        critical_fraction,
    }
}

/// One-shot extraction with a fresh ghost-extended field.
pub fn extract_isosurface(grid: &GridPotential, level: f64) -> Result<TriMesh> {
    LevelSets::new(grid).extract(level)
}

/// One-shot moments of a mesh from [`extract_isosurface`].
pub fn surface_integrals(grid: &GridPotential, mesh: &TriMesh) -> Result<LevelSetSample> {
    Ok(LevelSets::new(grid).integrals(mesh)?.0)
}
