//! Finite-difference capacitary potential for conformally flat metrics.
//!
//! For `g = φ⁴ δ` the Laplacian is `Δ_g u = φ⁻⁶ div(φ² ∇u)`, so the
//! potential solves the flat, variable-coefficient problem
//! `div(φ² ∇u) = 0`. It is discretised by the conservative 7-point stencil
//! on a uniform lattice covering `[-L, L]³` (or the octant `[0, L]³` with
//! mirror planes for radial factors), with
//!
//! * `u = 0` on lattice nodes inside or on the sphere `|x| = r0`, with
//!   lattice edges that cross the sphere shortened to the crossing point
//!   (Shortley–Weller), which makes the boundary error second order,
//! * `u = 1 − κ/|x| + κ m/(2|x|²)` on the outer faces, `m` the ADM mass
//!   when known, `κ` refreshed once from the flux of a first solve.
//!
//! The symmetric positive-definite system is solved with conjugate
//! gradients preconditioned by modified incomplete Cholesky, MIC(0).

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::ConformalMetric;

const MIC_TAU: f64 = 0.97;
const MIC_SIGMA: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptions {
    /// Box half-width `L`.
    pub half_width: f64,
    /// Lattice spacing `h`.
    pub h: f64,
    /// Relative residual at which conjugate gradients stop.
    pub tol: f64,
    /// Looser stopping residual for the first pass, which only has to
    /// produce the flux that fixes `κ`. Never tighter than `tol`.
    pub first_pass_tol: f64,
    pub max_iterations: usize,
    /// ADM mass used for the second-order outer data
    /// `u = 1 − κ/|x| + κ m/(2|x|²)`; `None` gives first-order data.
    pub outer_mass: Option<f64>,
}

impl GridOptions {
    pub fn new(half_width: f64, h: f64) -> Self {
        GridOptions { half_width, h, tol: 1e-8, first_pass_tol: 1e-6, max_iterations: 20_000, outer_mass: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveStats {
    pub kappa: f64,
    pub iterations: usize,
    pub relative_residual: f64,
    pub flux_capacity: f64,
}

/// Node classes of the lattice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum NodeKind {
    Unknown = 0,
    Masked = 1,
    Outer = 2,
}

/// Solved lattice potential. Node values cover the whole stored lattice,
/// boundary nodes included, in x-fastest order.
#[derive(Debug, Clone)]
pub struct GridPotential {
    pub metric: ConformalMetric,
    pub h: f64,
    pub half_width: f64,
    /// Only the octant `x, y, z ≥ 0` is stored; the planes through the
    /// origin are mirror planes.
    pub octant: bool,
    /// Nodes per axis.
    pub n: usize,
    /// Coordinate of node index 0 on every axis.
    pub origin: f64,
    pub u: Vec<f64>,
    pub kind: Vec<NodeKind>,
    pub kappa: f64,
    /// Coefficient of `κ/|x|²` in the outer data (half the ADM mass, or 0).
    pub outer_c: f64,
    pub passes: Vec<SolveStats>,
    pub c_flux: f64,
    pub c_energy: f64,
    pub warnings: Vec<String>,
}

/// Compact unknown lattice (nodes that are not on the outer faces) with the
/// assembled operator. Off-diagonal weights are stored in single precision;
/// the operator is defined by the rounded values, so it stays exactly
/// symmetric with zero row sums.
struct System {
    m: usize,
    off: usize,
    diag: Vec<f64>,
    ax: Vec<f32>,
    ay: Vec<f32>,
    az: Vec<f32>,
    /// Nodes coupled to the outer faces: index and `Σ w/|x|^k`, k = 0..4.
    outer: Vec<(usize, [f64; 5])>,
    /// Nodes coupled to masked nodes: (index, Σw).
    inner: Vec<(usize, f64)>,
    unknown: Vec<bool>,
}

/// MIC(0) factor: `pc = 1/√e` and the scaled off-diagonals `a·pc`.
struct Factor {
    pc: Vec<f32>,
    lx: Vec<f32>,
    ly: Vec<f32>,
    lz: Vec<f32>,
}

impl System {
    fn len(&self) -> usize {
        self.m * self.m * self.m + 2 * self.off
    }

    fn range(&self) -> (usize, usize) {
        (self.off, self.off + self.m * self.m * self.m)
    }

    fn rhs(&self, kappa: f64, c: f64) -> Vec<f64> {
        let mut b = vec![0.0; self.len()];
        for &(p, w) in &self.outer {
            b[p] = w[0] - kappa * (w[1] - c * w[2]);
        }
        b
    }

    /// `y = A x`, returning `x·y`.
    fn apply(&self, x: &[f64], y: &mut [f64]) -> f64 {
        let (m, mm) = (self.m, self.m * self.m);
        let (lo, hi) = self.range();
        let len = hi - lo;
        let d = &self.diag[lo..hi];
        let (axc, axm) = (&self.ax[lo..hi], &self.ax[lo - 1..hi - 1]);
        let (ayc, aym) = (&self.ay[lo..hi], &self.ay[lo - m..hi - m]);
        let (azc, azm) = (&self.az[lo..hi], &self.az[lo - mm..hi - mm]);
        let xc = &x[lo..hi];
        let (xp, xm) = (&x[lo + 1..hi + 1], &x[lo - 1..hi - 1]);
        let (yp, ym) = (&x[lo + m..hi + m], &x[lo - m..hi - m]);
        let (zp, zm) = (&x[lo + mm..hi + mm], &x[lo - mm..hi - mm]);
        let out = &mut y[lo..hi];
        let mut acc = 0.0;
        for i in 0..len {
            let v = d[i] * xc[i]
                - axc[i] as f64 * xp[i]
                - axm[i] as f64 * xm[i]
                - ayc[i] as f64 * yp[i]
                - aym[i] as f64 * ym[i]
                - azc[i] as f64 * zp[i]
                - azm[i] as f64 * zm[i];
            out[i] = v;
            acc += v * xc[i];
        }
        acc
    }

    fn mic0(&self) -> Factor {
        let (m, mm) = (self.m, self.m * self.m);
        let (lo, hi) = self.range();
        let (d, ax, ay, az) = (&self.diag, &self.ax, &self.ay, &self.az);
        let n = self.len();
        let mut pc = vec![0.0f64; n];
        for p in lo..hi {
            if d[p] == 0.0 {
                continue;
            }
            let (ax1, ay1, az1) = (ax[p - 1] as f64, ay[p - m] as f64, az[p - mm] as f64);
            let (px, py, pz) = (pc[p - 1], pc[p - m], pc[p - mm]);
            let mut e = d[p]
                - (ax1 * px).powi(2)
                - (ay1 * py).powi(2)
                - (az1 * pz).powi(2)
                - MIC_TAU
                    * (ax1 * (ay[p - 1] as f64 + az[p - 1] as f64) * px * px
                        + ay1 * (ax[p - m] as f64 + az[p - m] as f64) * py * py
                        + az1 * (ax[p - mm] as f64 + ay[p - mm] as f64) * pz * pz);
            if e < MIC_SIGMA * d[p] {
                e = d[p];
            }
            pc[p] = 1.0 / e.sqrt();
        }
        let scaled = |a: &[f32]| a.iter().zip(&pc).map(|(a, p)| (*a as f64 * p) as f32).collect::<Vec<f32>>();
        Factor {
            lx: scaled(ax),
            ly: scaled(ay),
            lz: scaled(az),
            pc: pc.iter().map(|v| *v as f32).collect(),
        }
    }

    /// `z = M⁻¹ r` using `q` as scratch; returns `r·z`.
    fn precondition(&self, f: &Factor, r: &[f64], q: &mut [f64], z: &mut [f64]) -> f64 {
        let (m, mm) = (self.m, self.m * self.m);
        let (lo, hi) = self.range();
        let (pc, lx, ly, lz) = (&f.pc[..], &f.lx[..], &f.ly[..], &f.lz[..]);
        let n = self.len();
        assert!(pc.len() == n && lx.len() == n && ly.len() == n && lz.len() == n);
        assert!(r.len() == n && q.len() == n && z.len() == n);
        assert!(lo >= mm && hi + mm <= n);
        let mut acc = 0.0;
        // SAFETY: every index below lies in [lo - mm, hi + mm) ⊂ [0, n),
        // checked above.
        // Terms off the x-recurrence are combined first so that only one
        // fused multiply-add sits on the loop-carried dependency chain.
        unsafe {
            for p in lo..hi {
                let d = *pc.get_unchecked(p) as f64;
                let base = (r.get_unchecked(p)
                    + *ly.get_unchecked(p - m) as f64 * q.get_unchecked(p - m)
                    + *lz.get_unchecked(p - mm) as f64 * q.get_unchecked(p - mm))
                    * d;
                let link = *lx.get_unchecked(p - 1) as f64 * d;
                *q.get_unchecked_mut(p) = link * q.get_unchecked(p - 1) + base;
            }
            for p in (lo..hi).rev() {
                let d = *pc.get_unchecked(p) as f64;
                let base = (q.get_unchecked(p)
                    + *ly.get_unchecked(p) as f64 * z.get_unchecked(p + m)
                    + *lz.get_unchecked(p) as f64 * z.get_unchecked(p + mm))
                    * d;
                let link = *lx.get_unchecked(p) as f64 * d;
                let v = link * z.get_unchecked(p + 1) + base;
                *z.get_unchecked_mut(p) = v;
                acc += v * r.get_unchecked(p);
            }
        }
        acc
    }

    /// Preconditioned conjugate gradients from the initial guess in `x`.
    /// All reductions run in a fixed order, so results are bit-reproducible.
    fn solve(&self, factor: &Factor, b: &[f64], x: &mut [f64], tol: f64, max_iterations: usize) -> Result<(usize, f64)> {
        let n = self.len();
        let mut r = vec![0.0; n];
        self.apply(x, &mut r);
        let mut rr = 0.0;
        for p in 0..n {
            r[p] = b[p] - r[p];
            rr += r[p] * r[p];
        }
        let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        if b_norm == 0.0 {
            return Err(Error::Solver("right-hand side vanishes; the outer boundary data are zero".into()));
        }
        let mut q = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut rz = self.precondition(factor, &r, &mut q, &mut z);
        let mut s = z.clone();
        let mut best = f64::INFINITY;
        let mut since_best = 0;
        for it in 0..=max_iterations {
            let res = rr.sqrt() / b_norm;
            if res <= tol {
                return Ok((it, res));
            }
            if res < 0.5 * best {
                best = res;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > 2000 {
                    return Err(Error::Solver(format!("CG stagnated at relative residual {res:.3e} after {it} iterations")));
                }
            }
            if it == max_iterations {
                break;
            }
            // q = A s
            let sq = self.apply(&s, &mut q);
            let alpha = rz / sq;
            rr = 0.0;
            for (rp, qp) in r.iter_mut().zip(&q) {
                *rp -= alpha * qp;
                rr += *rp * *rp;
            }
            let rz_new = self.precondition(factor, &r, &mut q, &mut z);
            let beta = rz_new / rz;
            rz = rz_new;
            for ((xp, sp), zp) in x.iter_mut().zip(s.iter_mut()).zip(&z) {
                *xp += alpha * *sp;
                *sp = zp + beta * *sp;
            }
        }
        let res = rr.sqrt() / b_norm;
        Err(Error::Solver(format!("CG did not reach {tol:.1e} in {max_iterations} iterations (residual {res:.3e})")))
    }
}

/// `∫∫_{[-1,1]²} (1 + s² + t²)⁻² ds dt`: the exterior Dirichlet energy of
/// `1/|x|` outside the cube `[-L, L]³` is `6 I / L`.
fn cube_exterior_integral() -> f64 {
    let tol = crate::quad::Tolerance::relative(1e-12);
    crate::quad::integrate(
        |s| {
            let inner = crate::quad::integrate(|t| Ok((1.0 + s * s + t * t).powi(-2)), -1.0, 1.0, tol)?;
            Ok(inner.value)
        },
        -1.0,
        1.0,
        tol,
    )
    .expect("smooth integrand")
    .value
}

struct Layout {
    octant: bool,
    /// Cells per half-width.
    cells: usize,
    /// Nodes per axis of the full lattice.
    n: usize,
    origin: f64,
    h: f64,
}

impl Layout {
    fn coord(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.h
    }

    fn is_outer(&self, i: usize) -> bool {
        if self.octant {
            i == self.n - 1
        } else {
            i == 0 || i == self.n - 1
        }
    }

    /// First full-lattice index of the compact lattice.
    fn first(&self) -> usize {
        if self.octant {
            0
        } else {
            1
        }
    }
}

impl GridPotential {
    /// Two-pass solve. With `warm` (a solution of the same metric, usually
    /// on a coarser lattice), its interpolant is the initial guess and its
    /// capacity the initial `κ`.
    pub fn solve(metric: &ConformalMetric, opts: GridOptions, warm: Option<&GridPotential>) -> Result<GridPotential> {
        let (l, h, r0) = (opts.half_width, opts.h, metric.r0);
        if !(l.is_finite() && h.is_finite() && l > 0.0 && h > 0.0) {
            return Err(Error::InvalidArgument(format!("box half-width and spacing must be positive (L = {l}, h = {h})")));
        }
        if l <= r0 || h >= r0 {
            return Err(Error::InvalidArgument(format!(
                "need L > r0 and h < r0 (L = {l}, h = {h}, r0 = {r0})"
            )));
        }
        if !(opts.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("solver tolerance must be positive, got {}", opts.tol)));
        }
        let cells = (l / h).round() as usize;
        if ((cells as f64) * h - l).abs() > 1e-9 * l {
            return Err(Error::InvalidArgument(format!("L = {l} is not an integer multiple of h = {h}")));
        }
        let mut warnings = Vec::new();
        if l < 8.0 * r0 {
            warnings.push(format!("box half-width L = {l} < 8 r0: the truncated outer data bias the capacity"));
        }
        if h > r0 / 8.0 {
            warnings.push(format!("spacing h = {h} > r0/8: the inner sphere is poorly resolved"));
        }
        let octant = metric.is_radial();
        let layout = if octant {
            Layout { octant, cells, n: cells + 1, origin: 0.0, h }
        } else {
            Layout { octant, cells, n: 2 * cells + 1, origin: -l, h }
        };
        let (kind, phi2) = classify(metric, &layout)?;
        let sys = assemble(&layout, &kind, &phi2, metric)?;
        drop(phi2);

        let m = sys.m;
        let mut x = vec![0.0; sys.len()];
        let mut kappa = r0;
        if let Some(w) = warm {
            kappa = w.c_flux;
            let first = layout.first();
            for k in 0..m {
                for j in 0..m {
                    for i in 0..m {
                        let p = sys.off + i + m * (j + m * k);
                        if sys.unknown[p] {
                            let pos = [layout.coord(i + first), layout.coord(j + first), layout.coord(k + first)];
                            x[p] = w.interpolate(pos).clamp(0.0, 1.0);
                        }
                    }
                }
            }
        } else {
            // Radial guess 1 − r0/|x|, always within the maximum principle.
            let first = layout.first();
            for k in 0..m {
                for j in 0..m {
                    for i in 0..m {
                        let p = sys.off + i + m * (j + m * k);
                        if sys.unknown[p] {
                            let pos = [layout.coord(i + first), layout.coord(j + first), layout.coord(k + first)];
                            x[p] = (1.0 - r0 / norm(pos)).max(0.0);
                        }
                    }
                }
            }
        }

        let symmetry = if octant { 8.0 } else { 1.0 };
        let c = 0.5 * opts.outer_mass.unwrap_or(0.0);
        let flux = |x: &[f64]| symmetry * sys.inner.iter().map(|&(p, w)| w * x[p]).sum::<f64>() / (4.0 * PI);
        let factor = sys.mic0();
        let mut passes = Vec::new();
        let mut first_x = Vec::new();
        for pass in 0..2 {
            let b = sys.rhs(kappa, c);
            let tol = if pass == 0 { opts.first_pass_tol.max(opts.tol) } else { opts.tol };
            let (iterations, res) = sys.solve(&factor, &b, &mut x, tol, opts.max_iterations)?;
            let c = flux(&x);
            passes.push(SolveStats { kappa, iterations, relative_residual: res, flux_capacity: c });
            if pass == 0 {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::Solver(format!("nonpositive boundary flux {c} after the first pass")));
                }
                first_x = x.clone();
                kappa = c;
            }
        }
        let (k0, c0) = (passes[0].kappa, passes[0].flux_capacity);
        let (k1, c1) = (passes[1].kappa, passes[1].flux_capacity);
        let first_update = (c0 - k0).abs();
        let second_update = (c1 - k1).abs();
        if second_update > 1e-12 * k1 && second_update >= first_update {
            return Err(Error::Solver(format!(
                "κ fixed point diverged: updates {first_update:.3e} then {second_update:.3e}"
            )));
        }
        // The solution, and so the flux, is affine in κ: the two passes fix
        // the line, whose fixed point is reached by combining them and
        // polishing the combination.
        if second_update > 1e-12 * k1 && (k1 - k0).abs() > 1e-12 * k1 {
            let slope = (c1 - c0) / (k1 - k0);
            let target = (c0 - slope * k0) / (1.0 - slope);
            let w = (target - k1) / (k1 - k0);
            for (xi, fi) in x.iter_mut().zip(&first_x) {
                *xi += w * (*xi - fi);
            }
            kappa = target;
            let b = sys.rhs(kappa, c);
            let (iterations, res) = sys.solve(&factor, &b, &mut x, opts.tol, opts.max_iterations)?;
            passes.push(SolveStats { kappa, iterations, relative_residual: res, flux_capacity: flux(&x) });
        }
        drop(first_x);
        let c_flux = passes.last().expect("two passes ran").flux_capacity;
        if (c_flux - kappa).abs() > 0.01 * kappa {
            warnings.push(format!(
                "κ fixed point unsettled (κ = {kappa}, flux capacity {c_flux}); enlarge L"
            ));
        }

        // Energy, including the exterior of the box.
        let mut energy = 0.0;
        let mm = m * m;
        for p in sys.off..sys.off + m * mm {
            if sys.unknown[p] {
                energy += sys.ax[p] as f64 * (x[p] - x[p + 1]).powi(2)
                    + sys.ay[p] as f64 * (x[p] - x[p + m]).powi(2)
                    + sys.az[p] as f64 * (x[p] - x[p + mm]).powi(2);
            }
        }
        for &(p, w) in &sys.inner {
            energy += w * x[p] * x[p];
        }
        for &(p, w) in &sys.outer {
            // Σ w (x − u_b)² with u_b = 1 − κ/r + κc/r².
            let v = x[p] - 1.0;
            energy += v * v * w[0]
                + 2.0 * v * kappa * (w[1] - c * w[2])
                + kappa * kappa * (w[2] - 2.0 * c * w[3] + c * c * w[4]);
        }
        let faces = [[l, 0.0, 0.0], [0.0, l, 0.0], [0.0, 0.0, l], [-l, 0.0, 0.0], [0.0, -l, 0.0], [0.0, 0.0, -l]];
        let mut phi2_far = 0.0;
        for f in faces {
            phi2_far += metric.phi_at(f)?.powi(2) / 6.0;
        }
        let exterior = phi2_far * kappa * kappa * 6.0 * cube_exterior_integral() / l;
        let c_energy = (symmetry * energy + exterior) / (4.0 * PI);

        // Scatter into the full lattice.
        let n = layout.n;
        let mut u = vec![0.0; n * n * n];
        let first = layout.first();
        for kk in 0..n {
            for jj in 0..n {
                for ii in 0..n {
                    let q = ii + n * (jj + n * kk);
                    u[q] = match kind[q] {
                        NodeKind::Masked => 0.0,
                        NodeKind::Outer => {
                            let pos = [layout.coord(ii), layout.coord(jj), layout.coord(kk)];
                            let r = norm(pos);
                            1.0 - kappa / r + kappa * c / (r * r)
                        }
                        NodeKind::Unknown => {
                            let p = sys.off + (ii - first) + m * ((jj - first) + m * (kk - first));
                            x[p]
                        }
                    };
                }
            }
        }
        Ok(GridPotential {
            metric: metric.clone(),
            h,
            half_width: l,
            octant,
            n,
            origin: layout.origin,
            u,
            kind,
            kappa,
            outer_c: c,
            passes,
            c_flux,
            c_energy,
            warnings,
        })
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.n * (j + self.n * k)
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.h
    }

    /// Outer data at radius `r`.
    pub fn outer_value(&self, r: f64) -> f64 {
        1.0 - self.kappa / r + self.kappa * self.outer_c / (r * r)
    }

    /// Smallest value imposed on the outer faces (face centres).
    pub fn min_outer_value(&self) -> f64 {
        self.outer_value(self.half_width)
    }

    /// Largest value imposed on the outer faces (box corners).
    pub fn max_outer_value(&self) -> f64 {
        self.outer_value(self.half_width * 3f64.sqrt())
    }

    /// Full-space point folded into the stored region.
    fn fold(&self, p: [f64; 3]) -> [f64; 3] {
        if self.octant {
            [p[0].abs(), p[1].abs(), p[2].abs()]
        } else {
            p
        }
    }

    /// Trilinear interpolation of `u`; outside the box the outer data.
    pub fn interpolate(&self, p: [f64; 3]) -> f64 {
        let q = self.fold(p);
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = (q[a] - self.origin) / self.h;
            if s < 0.0 || s > (self.n - 1) as f64 {
                return self.outer_value(norm(p));
            }
            let i = (s.floor() as usize).min(self.n - 2);
            base[a] = i;
            frac[a] = s - i as f64;
        }
        let mut v = 0.0;
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    let w = (if di == 1 { frac[0] } else { 1.0 - frac[0] })
                        * (if dj == 1 { frac[1] } else { 1.0 - frac[1] })
                        * (if dk == 1 { frac[2] } else { 1.0 - frac[2] });
                    if w != 0.0 {
                        v += w * self.u[self.index(base[0] + di, base[1] + dj, base[2] + dk)];
                    }
                }
            }
        }
        v
    }

    /// Discrete maximum principle on unknown nodes: `(min, max, ok)`.
    pub fn maximum_principle(&self) -> (f64, f64, bool) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (v, k) in self.u.iter().zip(&self.kind) {
            if *k == NodeKind::Unknown {
                lo = lo.min(*v);
                hi = hi.max(*v);
            }
        }
        (lo, hi, lo > 0.0 && hi < self.max_outer_value())
    }

    /// Writes the flat binary export: magic `CAPGRID\0`, `u32` version,
    /// three `u32` dimensions, `f64` h, L and origin, then node values
    /// x-fastest; all little-endian.
    pub fn write_binary<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(b"CAPGRID\0")?;
        w.write_all(&1u32.to_le_bytes())?;
        for _ in 0..3 {
            w.write_all(&(self.n as u32).to_le_bytes())?;
        }
        for v in [self.h, self.half_width, self.origin] {
            w.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in self.u.chunks(4096) {
            buf.clear();
            for v in chunk {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }
}

fn norm(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Node kinds and nodal `φ²` (masked nodes take φ at their radial projection
/// onto the boundary sphere, where the conformal factor is defined).
fn classify(metric: &ConformalMetric, layout: &Layout) -> Result<(Vec<NodeKind>, Vec<f64>)> {
    let n = layout.n;
    let r0 = metric.r0;
    let mut kind = vec![NodeKind::Unknown; n * n * n];
    let mut phi2 = vec![0.0; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let q = i + n * (j + n * k);
                let p = [layout.coord(i), layout.coord(j), layout.coord(k)];
                let r = norm(p);
                let outer = layout.is_outer(i) || layout.is_outer(j) || layout.is_outer(k);
                kind[q] = if outer {
                    NodeKind::Outer
                } else if r <= r0 {
                    NodeKind::Masked
                } else {
                    NodeKind::Unknown
                };
                let eval_at = if r <= r0 {
                    if r == 0.0 {
                        [r0, 0.0, 0.0]
                    } else {
                        [p[0] * r0 / r, p[1] * r0 / r, p[2] * r0 / r]
                    }
                } else {
                    p
                };
                let v = metric.phi_at(eval_at)?;
                if !(v > 0.0) {
                    return Err(Error::Metric(format!("conformal factor {v} is not positive at {eval_at:?}")));
                }
                phi2[q] = v * v;
            }
        }
    }
    Ok((kind, phi2))
}

fn assemble(layout: &Layout, kind: &[NodeKind], phi2: &[f64], metric: &ConformalMetric) -> Result<System> {
    let r0 = metric.r0;
    let n = layout.n;
    let first = layout.first();
    let m = if layout.octant { layout.cells } else { 2 * layout.cells - 1 };
    let off = m * m;
    let len = m * m * m + 2 * off;
    let mut sys = System {
        m,
        off,
        diag: vec![0.0; len],
        ax: vec![0.0f32; len],
        ay: vec![0.0f32; len],
        az: vec![0.0f32; len],
        outer: Vec::new(),
        inner: Vec::new(),
        unknown: vec![false; len],
    };
    let h = layout.h;
    let full = |i: usize, j: usize, k: usize| i + n * (j + n * k);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let (fi, fj, fk) = (i + first, j + first, k + first);
                let q = full(fi, fj, fk);
                if kind[q] != NodeKind::Unknown {
                    continue;
                }
                let p = off + i + m * (j + m * k);
                sys.unknown[p] = true;
                let idx = [fi, fj, fk];
                let mut w_outer = [0.0; 5];
                let mut w_inner = 0.0;
                for axis in 0..3 {
                    // Dual-face fraction inside the stored region: halved for
                    // each transverse index on a mirror plane.
                    let mut frac = 1.0;
                    if layout.octant {
                        for b in 0..3 {
                            if b != axis && idx[b] == 0 {
                                frac *= 0.5;
                            }
                        }
                    }
                    for dir in [1i64, -1] {
                        let c = idx[axis] as i64 + dir;
                        if c < 0 {
                            continue; // mirror plane: no edge
                        }
                        let mut nb = idx;
                        nb[axis] = c as usize;
                        let qn = full(nb[0], nb[1], nb[2]);
                        let mut w = h * 0.5 * (phi2[q] + phi2[qn]) * frac;
                        if kind[qn] == NodeKind::Unknown {
                            w = w as f32 as f64;
                        }
                        sys.diag[p] += w;
                        match kind[qn] {
                            NodeKind::Unknown => {
                                if dir == 1 {
                                    let w = w as f32;
                                    match axis {
                                        0 => sys.ax[p] = w,
                                        1 => sys.ay[p] = w,
                                        _ => sys.az[p] = w,
                                    }
                                }
                            }
                            NodeKind::Masked => {
                                // Cut edge: u = 0 is imposed where the edge
                                // meets the sphere, a fraction θ of the way.
                                let pos = [layout.coord(fi), layout.coord(fj), layout.coord(fk)];
                                let theta = crossing_fraction(pos, axis, dir as f64 * h, r0);
                                let mut at = pos;
                                at[axis] += theta * dir as f64 * h;
                                let phi_b = metric.phi_at(at)?;
                                let w_cut = h * 0.5 * (phi2[q] + phi_b * phi_b) * frac / theta;
                                sys.diag[p] += w_cut - w;
                                w_inner += w_cut;
                            }
                            NodeKind::Outer => {
                                let r = norm([layout.coord(nb[0]), layout.coord(nb[1]), layout.coord(nb[2])]);
                                let mut rk = 1.0;
                                for slot in w_outer.iter_mut() {
                                    *slot += w / rk;
                                    rk *= r;
                                }
                            }
                        }
                    }
                }
                if w_outer[0] > 0.0 {
                    sys.outer.push((p, w_outer));
                }
                if w_inner > 0.0 {
                    sys.inner.push((p, w_inner));
                }
            }
        }
    }
    Ok(sys)
}

/// Fraction `θ ∈ (0, 1]` along the axis step `d` from `p` (outside the sphere)
/// at which `|p + θ d e_axis| = r0`.
pub(crate) fn crossing_fraction(p: [f64; 3], axis: usize, d: f64, r0: f64) -> f64 {
    let pp = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
    let pd = p[axis] * d;
    let disc = (pd * pd - d * d * (pp - r0 * r0)).max(0.0);
    let theta = (-pd - disc.sqrt()) / (d * d);
    theta.clamp(1e-3, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn flat(r0: f64) -> ConformalMetric {
        ConformalMetric::parse_radial("1", &HashMap::new(), r0).unwrap()
    }

    #[test]
    fn exterior_cube_integral() {
        // Closed form: 4 arctan(1/√3)·(…) is awkward; check against a crude
        // midpoint sum instead.
        let n = 2000;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
                let y = -1.0 + (j as f64 + 0.5) * 2.0 / n as f64;
                s += (1.0 + x * x + y * y).powi(-2);
            }
        }
        s *= 4.0 / (n * n) as f64;
        assert!((cube_exterior_integral() - s).abs() < 1e-6);
    }

    #[test]
    fn coarse_flat_solve_obeys_maximum_principle() {
        let g = GridPotential::solve(&flat(1.0), GridOptions::new(6.0, 0.25), None).unwrap();
        let (lo, hi, ok) = g.maximum_principle();
        assert!(ok, "{lo} {hi}");
        assert!((g.c_flux - 1.0).abs() < 0.15, "{}", g.c_flux);
        assert!((g.c_flux - g.c_energy).abs() < 0.02 * g.c_flux, "{} {}", g.c_flux, g.c_energy);
        assert_eq!(g.passes.len(), 3);
        assert!(g.passes[2].relative_residual <= GridOptions::new(6.0, 0.25).tol);
        // The closing pass sits on the κ fixed point.
        assert!((g.c_flux - g.kappa).abs() < 1e-6 * g.kappa, "{} {}", g.c_flux, g.kappa);
    }

    #[test]
    fn octant_and_full_box_agree() {
        // A radial factor written spatially forces the full-box path.
        let radial = ConformalMetric::parse_radial("1 + 0.5/r", &HashMap::new(), 1.0).unwrap();
        let spatial = ConformalMetric::parse_spatial("1 + 0.5/sqrt(x^2+y^2+z^2)", &HashMap::new(), 1.0).unwrap();
        // Tight first pass so both layouts use the same κ.
        let opts = GridOptions { tol: 1e-10, first_pass_tol: 1e-10, ..GridOptions::new(4.0, 0.25) };
        let a = GridPotential::solve(&radial, opts, None).unwrap();
        let b = GridPotential::solve(&spatial, opts, None).unwrap();
        assert!(a.octant && !b.octant);
        assert!((a.c_flux - b.c_flux).abs() < 1e-8 * a.c_flux, "{} {}", a.c_flux, b.c_flux);
        let p = [1.3, -0.7, 0.4];
        assert!((a.interpolate(p) - b.interpolate(p)).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(GridPotential::solve(&flat(1.0), GridOptions::new(0.5, 0.1), None).is_err());
        assert!(GridPotential::solve(&flat(1.0), GridOptions::new(4.0, 1.5), None).is_err());
        assert!(GridPotential::solve(&flat(1.0), GridOptions::new(4.1, 0.25), None).is_err());
        let small = GridPotential::solve(&flat(1.0), GridOptions::new(2.0, 0.25), None).unwrap();
        assert!(small.warnings.iter().any(|w| w.contains("8 r0")));
    }

    #[test]
    fn binary_export_layout() {
        let g = GridPotential::solve(&flat(1.0), GridOptions::new(3.0, 0.5), None).unwrap();
        let mut bytes = Vec::new();
        g.write_binary(&mut bytes).unwrap();
        assert_eq!(&bytes[..8], b"CAPGRID\0");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize, g.n);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 0.5);
        assert_eq!(bytes.len(), 48 + 8 * g.n.pow(3));
        let last = f64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        assert_eq!(last, *g.u.last().unwrap());
    }
}
