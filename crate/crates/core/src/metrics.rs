//! Metric families, curvature, asymptotic diagnostics and ADM mass.
//!
//! Two families are supported:
//!
//! * warped products `a(r) dr² + f(r)² dΩ²` on `r ≥ r0`;
//! * conformally flat metrics `φ⁴ δ` outside the coordinate ball of radius
//!   `r0`, with `φ` either radial or a function of `(x, y, z)`.
//!
//! A radial conformal metric is also a warped product with `a = φ⁴` and
//! `f = r φ²`; [`Metric::warped`] performs that conversion so the radial
//! potential solver only deals with one family.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::GaussLegendre;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::quad::extrapolate_to_zero;

const R: &[&str] = &["r"];
const XYZ: &[&str] = &["x", "y", "z"];

/// Tolerance for the nonnegative scalar curvature check.
pub const TOL_R: f64 = 1e-10;

fn radial_expr(src: &str, params: &HashMap<String, f64>) -> Result<Expr> {
    Expr::parse(src, R, params).map_err(|e| Error::Metric(format!("`{src}`: {e}")))
}

/// Metric coefficients and their radial derivatives at one radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadialPoint {
    pub r: f64,
    pub a: f64,
    pub da: f64,
    pub f: f64,
    pub df: f64,
    pub ddf: f64,
}

impl RadialPoint {
    /// `df/ds` for the unit-speed radial coordinate `s`.
    pub fn f_s(&self) -> f64 {
        self.df / self.a.sqrt()
    }

    /// `d²f/ds²`.
    pub fn f_ss(&self) -> f64 {
        self.ddf / self.a - self.df * self.da / (2.0 * self.a * self.a)
    }

    pub fn scalar_curvature(&self) -> f64 {
        let fs = self.f_s();
        -4.0 * self.f_ss() / self.f + 2.0 * (1.0 - fs * fs) / (self.f * self.f)
    }

    /// Mean curvature of the coordinate sphere, outward normal.
    pub fn mean_curvature(&self) -> f64 {
        2.0 * self.df / (self.f * self.a.sqrt())
    }

    pub fn hawking_mass(&self) -> f64 {
        let fs = self.f_s();
        0.5 * self.f * (1.0 - fs * fs)
    }

    pub fn area(&self) -> f64 {
        4.0 * PI * self.f * self.f
    }
}

/// Warped product `a(r) dr² + f(r)² dΩ²` on `[r0, ∞)`.
#[derive(Debug, Clone)]
pub struct RadialMetric {
    pub r0: f64,
    a: Expr,
    f: Expr,
    da: Expr,
    df: Expr,
    ddf: Expr,
}

impl RadialMetric {
    pub fn new(a: Expr, f: Expr, r0: f64) -> Result<Self> {
        if !(r0.is_finite() && r0 > 0.0) {
            return Err(Error::Metric(format!("inner radius must be positive, got {r0}")));
        }
        for e in [&a, &f] {
            if e.variables() != ["r"] {
                return Err(Error::Metric(format!("radial coefficient `{e}` must be a function of r only")));
            }
        }
        let da = a.differentiate("r")?;
        let df = f.differentiate("r")?;
        let ddf = df.differentiate("r")?;
        Ok(RadialMetric { r0, a, f, da, df, ddf })
    }

    pub fn parse(a: &str, f: &str, params: &HashMap<String, f64>, r0: f64) -> Result<Self> {
        Self::new(radial_expr(a, params)?, radial_expr(f, params)?, r0)
    }

    pub fn flat(r0: f64) -> Result<Self> {
        Self::parse("1", "r", &HashMap::new(), r0)
    }

    pub fn a(&self) -> &Expr {
        &self.a
    }

    pub fn f(&self) -> &Expr {
        &self.f
    }

    pub fn point(&self, r: f64) -> Result<RadialPoint> {
        let x = [r];
        Ok(RadialPoint {
            r,
            a: self.a.eval(&x)?,
            da: self.da.eval(&x)?,
            f: self.f.eval(&x)?,
            df: self.df.eval(&x)?,
            ddf: self.ddf.eval(&x)?,
        })
    }

    /// `a(r)` and `f(r)` only, for quadrature hot loops.
    pub fn a_f(&self, r: f64) -> Result<(f64, f64)> {
        let x = [r];
        Ok((self.a.eval(&x)?, self.f.eval(&x)?))
    }

    pub fn df_at(&self, r: f64) -> Result<f64> {
        Ok(self.df.eval(&[r])?)
    }

    /// Pullback under `r ↦ r/λ` followed by scaling the metric by `λ²`.
    pub fn rescaled(&self, lambda: f64) -> Result<Self> {
        let shrink = Expr::parse("r", R, &HashMap::new()).expect("literal").scale(1.0 / lambda);
        let a = self.a.substitute("r", &shrink)?;
        let f = self.f.substitute("r", &shrink)?.scale(lambda);
        Self::new(a, f, self.r0 * lambda)
    }
}

#[derive(Debug, Clone)]
pub enum ConformalFactor {
    Radial { phi: Expr, dphi: Expr, ddphi: Expr },
    Spatial { phi: Expr, grad: [Expr; 3], laplacian: Expr },
}

/// `φ⁴ δ` outside the coordinate ball of radius `r0`.
#[derive(Debug, Clone)]
pub struct ConformalMetric {
    pub r0: f64,
    pub factor: ConformalFactor,
}

impl ConformalMetric {
    pub fn radial(phi: Expr, r0: f64) -> Result<Self> {
        check_r0(r0)?;
        if phi.variables() != ["r"] {
            return Err(Error::Metric(format!("radial conformal factor `{phi}` must be a function of r")));
        }
        let dphi = phi.differentiate("r")?;
        let ddphi = dphi.differentiate("r")?;
        Ok(ConformalMetric { r0, factor: ConformalFactor::Radial { phi, dphi, ddphi } })
    }

    pub fn spatial(phi: Expr, r0: f64) -> Result<Self> {
        check_r0(r0)?;
        if phi.variables() != XYZ {
            return Err(Error::Metric(format!("spatial conformal factor `{phi}` must be a function of x, y, z")));
        }
        let grad = [phi.differentiate("x")?, phi.differentiate("y")?, phi.differentiate("z")?];
        let lap_terms = [grad[0].differentiate("x")?, grad[1].differentiate("y")?, grad[2].differentiate("z")?];
        let laplacian = &(&lap_terms[0] + &lap_terms[1]) + &lap_terms[2];
        Ok(ConformalMetric { r0, factor: ConformalFactor::Spatial { phi, grad, laplacian } })
    }

    pub fn parse_radial(phi: &str, params: &HashMap<String, f64>, r0: f64) -> Result<Self> {
        Self::radial(radial_expr(phi, params)?, r0)
    }

    pub fn parse_spatial(phi: &str, params: &HashMap<String, f64>, r0: f64) -> Result<Self> {
        let e = Expr::parse(phi, XYZ, params).map_err(|e| Error::Metric(format!("`{phi}`: {e}")))?;
        Self::spatial(e, r0)
    }

    /// Schwarzschild of mass `m`, boundary at the horizon `r = m/2`.
    pub fn schwarzschild(m: f64) -> Result<Self> {
        Self::schwarzschild_truncated(m, 0.5 * m)
    }

    /// Schwarzschild of mass `m` with the boundary moved to `r0 ≥ m/2`.
    pub fn schwarzschild_truncated(m: f64, r0: f64) -> Result<Self> {
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Metric(format!("Schwarzschild mass must be positive, got {m}")));
        }
        let params = HashMap::from([("m".to_string(), m)]);
        Self::parse_radial("1 + m/(2*r)", &params, r0)
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.factor, ConformalFactor::Radial { .. })
    }

    /// φ at a Cartesian point.
    pub fn phi_at(&self, p: [f64; 3]) -> Result<f64> {
        match &self.factor {
            ConformalFactor::Radial { phi, .. } => Ok(phi.eval(&[norm(p)])?),
            ConformalFactor::Spatial { phi, .. } => Ok(phi.eval(&p)?),
        }
    }

    /// φ and its Cartesian gradient at a point.
    pub fn phi_grad_at(&self, p: [f64; 3]) -> Result<(f64, [f64; 3])> {
        match &self.factor {
            ConformalFactor::Radial { phi, dphi, .. } => {
                let r = norm(p);
                let v = phi.eval(&[r])?;
                let d = dphi.eval(&[r])?;
                Ok((v, [d * p[0] / r, d * p[1] / r, d * p[2] / r]))
            }
            ConformalFactor::Spatial { phi, grad, .. } => {
                Ok((phi.eval(&p)?, [grad[0].eval(&p)?, grad[1].eval(&p)?, grad[2].eval(&p)?]))
            }
        }
    }

    /// Scalar curvature `−8 φ⁻⁵ Δφ` at a Cartesian point.
    pub fn scalar_curvature_at(&self, p: [f64; 3]) -> Result<f64> {
        match &self.factor {
            ConformalFactor::Radial { .. } => self.scalar_curvature_radial(norm(p)),
            ConformalFactor::Spatial { phi, laplacian, .. } => {
                let v = phi.eval(&p)?;
                Ok(-8.0 * laplacian.eval(&p)? / v.powi(5))
            }
        }
    }

    fn scalar_curvature_radial(&self, r: f64) -> Result<f64> {
        let ConformalFactor::Radial { phi, dphi, ddphi } = &self.factor else {
            return Err(Error::InvalidArgument("radial curvature of a non-radial conformal factor".into()));
        };
        let x = [r];
        let v = phi.eval(&x)?;
        let lap = ddphi.eval(&x)? + 2.0 * dphi.eval(&x)? / r;
        Ok(-8.0 * lap / v.powi(5))
    }

    /// The warped-product form `a = φ⁴`, `f = r φ²` of a radial factor.
    pub fn to_warped(&self) -> Result<RadialMetric> {
        let ConformalFactor::Radial { phi, .. } = &self.factor else {
            return Err(Error::InvalidArgument("a spatial conformal factor has no warped-product form".into()));
        };
        let r = Expr::parse("r", R, &HashMap::new()).expect("literal");
        let phi2 = phi.powf(2.0);
        RadialMetric::new(phi2.powf(2.0), &r * &phi2, self.r0)
    }

    /// Coordinate rescaling: `φ(x) ↦ φ(x/λ)`, `r0 ↦ λ r0`.
    pub fn rescaled(&self, lambda: f64) -> Result<Self> {
        match &self.factor {
            ConformalFactor::Radial { phi, .. } => {
                let shrink = Expr::parse("r", R, &HashMap::new()).expect("literal").scale(1.0 / lambda);
                Self::radial(phi.substitute("r", &shrink)?, self.r0 * lambda)
            }
            ConformalFactor::Spatial { phi, .. } => {
                let mut e = phi.clone();
                for v in XYZ {
                    let shrink = Expr::parse(v, XYZ, &HashMap::new()).expect("literal").scale(1.0 / lambda);
                    e = e.substitute(v, &shrink)?;
                }
                Self::spatial(e, self.r0 * lambda)
            }
        }
    }

    /// `m(r) = −(1/2π) ∮_{|x|=r} φ³ ∂_r φ dσ`, the ADM flux integrand
    /// `(∂_j g_ij − ∂_i g_jj) ν^i / 16π` for `g = φ⁴ δ`.
    pub fn flux_mass(&self, r: f64) -> Result<f64> {
        match &self.factor {
            ConformalFactor::Radial { phi, dphi, .. } => {
                let x = [r];
                let v = phi.eval(&x)?;
                Ok(-2.0 * r * r * v.powi(3) * dphi.eval(&x)?)
            }
            ConformalFactor::Spatial { .. } => {
                let total = sphere_integral(r, 24, |p| {
                    let (v, g) = self.phi_grad_at(p)?;
                    let dr = (g[0] * p[0] + g[1] * p[1] + g[2] * p[2]) / r;
                    Ok(v.powi(3) * dr)
                })?;
                Ok(-total / (2.0 * PI))
            }
        }
    }
}

fn check_r0(r0: f64) -> Result<()> {
    if r0.is_finite() && r0 > 0.0 {
        Ok(())
    } else {
        Err(Error::Metric(format!("inner radius must be positive, got {r0}")))
    }
}

fn norm(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Product rule on the unit sphere: Gauss–Legendre in `cos θ`, the
/// trapezoid rule in the azimuth. Weights sum to `4π`.
pub(crate) fn sphere_rule(n: usize) -> Vec<([f64; 3], f64)> {
    let rule = GaussLegendre::new(NonZeroUsize::new(n).expect("nonzero"));
    let n_az = 2 * n;
    let dphi = 2.0 * PI / n_az as f64;
    let mut out = Vec::with_capacity(n * n_az);
    for &(c, w) in rule.as_node_weight_pairs() {
        let s = (1.0 - c * c).sqrt();
        for k in 0..n_az {
            let az = dphi * (k as f64 + 0.5);
            out.push(([s * az.cos(), s * az.sin(), c], w * dphi));
        }
    }
    out
}

/// Integral over the coordinate sphere of radius `r` (flat area element).
fn sphere_integral(r: f64, n: usize, mut g: impl FnMut([f64; 3]) -> Result<f64>) -> Result<f64> {
    let mut total = 0.0;
    for (d, w) in sphere_rule(n) {
        total += w * g(d.map(|x| r * x))?;
    }
    Ok(total * r * r)
}

/// Unit directions used to probe spatial conformal factors on spheres.
fn probe_directions() -> Vec<[f64; 3]> {
    let mut dirs = Vec::new();
    for i in -1i32..=1 {
        for j in -1i32..=1 {
            for k in -1i32..=1 {
                if (i, j, k) != (0, 0, 0) {
                    let n = ((i * i + j * j + k * k) as f64).sqrt();
                    dirs.push([i as f64 / n, j as f64 / n, k as f64 / n]);
                }
            }
        }
    }
    dirs
}

/// Any supported metric.
#[derive(Debug, Clone)]
pub enum Metric {
    Warped(RadialMetric),
    Conformal(ConformalMetric),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureSample {
    pub r: f64,
    #[serde(rename = "R")]
    pub scalar_curvature: f64,
    pub h_sphere: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonnegativeR {
    pub ok: bool,
    pub min_r_value: f64,
    pub argmin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayOrder {
    /// The metric is exactly Euclidean on the sampled range.
    Exact,
    Estimated { tau: f64 },
}

impl DecayOrder {
    pub fn is_sufficient(&self) -> bool {
        match self {
            DecayOrder::Exact => true,
            DecayOrder::Estimated { tau } => *tau > 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdmMass {
    pub value: f64,
    pub error_estimate: f64,
    pub method: &'static str,
    /// Flux-integral value when a Hawking-limit value is primary (and vice
    /// versa), if both apply.
    pub cross_check: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricDiagnostics {
    pub min_a: f64,
    pub min_f: f64,
    pub min_df: f64,
    pub decay: DecayOrder,
    pub r_max: f64,
    pub warnings: Vec<String>,
}

impl Metric {
    pub fn r0(&self) -> f64 {
        match self {
            Metric::Warped(m) => m.r0,
            Metric::Conformal(m) => m.r0,
        }
    }

    pub fn is_radial(&self) -> bool {
        match self {
            Metric::Warped(_) => true,
            Metric::Conformal(c) => c.is_radial(),
        }
    }

    /// Warped-product view; fails for spatial conformal factors.
    pub fn warped(&self) -> Result<RadialMetric> {
        match self {
            Metric::Warped(m) => Ok(m.clone()),
            Metric::Conformal(c) => c.to_warped(),
        }
    }

    pub fn conformal(&self) -> Option<&ConformalMetric> {
        match self {
            Metric::Conformal(c) => Some(c),
            Metric::Warped(_) => None,
        }
    }

    /// Scalar curvature at radius `r` (radial metrics only).
    pub fn scalar_curvature(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        match self {
            Metric::Warped(m) => Ok(m.point(r)?.scalar_curvature()),
            Metric::Conformal(c) if c.is_radial() => c.scalar_curvature_radial(r),
            Metric::Conformal(_) => Err(Error::InvalidArgument(
                "scalar curvature at a radius is undefined for a non-radial factor; use scalar_curvature_at".into(),
            )),
        }
    }

    /// Mean curvature of the coordinate sphere `{|x| = r}` (radial metrics).
    pub fn mean_curvature_sphere(&self, r: f64) -> Result<f64> {
        self.check_radius(r)?;
        Ok(self.warped()?.point(r)?.mean_curvature())
    }

    pub fn curvature_sample(&self, r: f64) -> Result<CurvatureSample> {
        Ok(CurvatureSample {
            r,
            scalar_curvature: self.scalar_curvature(r)?,
            h_sphere: self.mean_curvature_sphere(r)?,
        })
    }

    fn check_radius(&self, r: f64) -> Result<()> {
        let r0 = self.r0();
        // Allow rounding slack so callers may pass a recomputed r0.
        if r.is_finite() && r >= r0 * (1.0 - 1e-12) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("radius {r} lies inside the boundary r0 = {r0}")))
        }
    }

    /// Minimum of the scalar curvature over `r_grid` (and, for spatial
    /// factors, over probe directions on each sphere).
    pub fn check_nonnegative_r(&self, r_grid: &[f64]) -> Result<NonnegativeR> {
        let mut min = f64::INFINITY;
        let mut argmin = f64::NAN;
        let dirs = probe_directions();
        for &r in r_grid {
            let value = match self {
                Metric::Conformal(c) if !c.is_radial() => {
                    let mut m = f64::INFINITY;
                    for d in &dirs {
                        m = m.min(c.scalar_curvature_at([r * d[0], r * d[1], r * d[2]])?);
                    }
                    m
                }
                _ => self.scalar_curvature(r)?,
            };
            if value < min {
                min = value;
                argmin = r;
            }
        }
        Ok(NonnegativeR { ok: min >= -TOL_R, min_r_value: min, argmin })
    }

    /// Geometric diagnostic grid on `[r0, r_max]`.
    pub fn diagnostic_grid(&self, r_max: f64, n: usize) -> Vec<f64> {
        geometric_grid(self.r0(), r_max, n)
    }

    /// Positivity, monotonicity of the areal radius and decay diagnostics.
    /// Nonpositive `a` or `f′` abort; weak decay only warns.
    pub fn diagnose(&self, r_max: f64) -> Result<MetricDiagnostics> {
        let grid = self.diagnostic_grid(r_max, 400);
        let mut warnings = Vec::new();
        let (mut min_a, mut min_f, mut min_df) = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        match self {
            Metric::Conformal(c) if !c.is_radial() => {
                let dirs = probe_directions();
                for &r in &grid {
                    for d in &dirs {
                        let v = c.phi_at([r * d[0], r * d[1], r * d[2]])?;
                        min_a = min_a.min(v.powi(4));
                        min_f = min_f.min(r * v * v);
                    }
                }
                if min_a <= 0.0 {
                    return Err(Error::Metric(format!("conformal factor is not positive (min φ⁴ = {min_a})")));
                }
                min_df = f64::NAN;
            }
            _ => {
                let w = self.warped()?;
                for &r in &grid {
                    let p = w.point(r)?;
                    min_a = min_a.min(p.a);
                    min_f = min_f.min(p.f);
                    min_df = min_df.min(p.df);
                    if p.a <= 0.0 {
                        return Err(Error::Metric(format!("a(r) = {} ≤ 0 at r = {r}", p.a)));
                    }
                    if p.f <= 0.0 {
                        return Err(Error::Metric(format!("f(r) = {} ≤ 0 at r = {r}", p.f)));
                    }
                    if p.df <= 0.0 && r > self.r0() {
                        return Err(Error::Metric(format!(
                            "f′(r) = {} ≤ 0 at r = {r}: coordinate spheres do not foliate",
                            p.df
                        )));
                    }
                }
                // f′(r0) = 0 is allowed (minimal boundary).
                let p0 = w.point(self.r0())?;
                if p0.df < -1e-12 * p0.f / self.r0() {
                    return Err(Error::Metric(format!("f′(r0) = {} < 0", p0.df)));
                }
            }
        }
        let decay = self.decay_order()?;
        if !decay.is_sufficient() {
            if let DecayOrder::Estimated { tau } = decay {
                warnings.push(format!("estimated decay order τ ≈ {tau:.3} ≤ 1/2; the end may not be asymptotically flat"));
            }
        }
        Ok(MetricDiagnostics { min_a, min_f, min_df, decay, r_max, warnings })
    }

    /// Log-log slope of `|g − δ|` against `r` on a dyadic grid.
    pub fn decay_order(&self) -> Result<DecayOrder> {
        let base = 16.0 * self.r0().max(1.0);
        let dirs = probe_directions();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for k in 0..10 {
            let r = base * 2f64.powi(k);
            let dev = match self {
                Metric::Conformal(c) if !c.is_radial() => {
                    let mut m: f64 = 0.0;
                    for d in &dirs {
                        let v = c.phi_at([r * d[0], r * d[1], r * d[2]])?;
                        m = m.max((v.powi(4) - 1.0).abs());
                    }
                    m
                }
                _ => {
                    let (a, f) = self.warped()?.a_f(r)?;
                    let q = f / r;
                    (a - 1.0).abs().max((q * q - 1.0).abs())
                }
            };
            if dev > 1e-14 {
                xs.push(r.ln());
                ys.push(dev.ln());
            }
        }
        if xs.len() < 3 {
            return Ok(DecayOrder::Exact);
        }
        Ok(DecayOrder::Estimated { tau: -least_squares_slope(&xs, &ys) })
    }

    /// ADM mass by extrapolating a quasi-local mass along increasing radii.
    pub fn adm_mass(&self) -> Result<AdmMass> {
        let base = 64.0 * self.r0().max(1.0);
        let radii: Vec<f64> = (0..6).map(|k| base * 2f64.powi(k)).collect();
        let xs: Vec<f64> = radii.iter().map(|r| 1.0 / r).collect();
        let extrapolate = |values: Vec<f64>, what: &str| -> Result<(f64, f64)> {
            let (limit, err) = extrapolate_to_zero(&xs, &values);
            let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if !limit.is_finite() || err > 1e-6 * scale {
                return Err(Error::Extrapolation(format!(
                    "{what} did not settle: limit {limit}, successive difference {err}"
                )));
            }
            Ok((limit, err))
        };
        match self {
            Metric::Warped(w) => {
                let vals = radii.iter().map(|&r| Ok(w.point(r)?.hawking_mass())).collect::<Result<Vec<_>>>()?;
                let (value, err) = extrapolate(vals, "Hawking-type mass")?;
                Ok(AdmMass { value, error_estimate: err, method: "hawking_limit", cross_check: None })
            }
            Metric::Conformal(c) => {
                let vals = radii.iter().map(|&r| c.flux_mass(r)).collect::<Result<Vec<_>>>()?;
                let (value, err) = extrapolate(vals, "ADM flux integral")?;
                let cross_check = if c.is_radial() {
                    let w = c.to_warped()?;
                    let vals = radii.iter().map(|&r| Ok(w.point(r)?.hawking_mass())).collect::<Result<Vec<_>>>()?;
                    let (hawking, _) = extrapolate(vals, "Hawking-type mass")?;
                    if (hawking - value).abs() > 1e-6 * value.abs().max(1e-3) {
                        return Err(Error::Extrapolation(format!(
                            "flux mass {value} and Hawking-limit mass {hawking} disagree"
                        )));
                    }
                    Some(hawking)
                } else {
                    None
                };
                Ok(AdmMass { value, error_estimate: err, method: "flux_integral", cross_check })
            }
        }
    }

    /// Metric rescaled by `λ²` (coordinates stretched by `λ`).
    pub fn rescaled(&self, lambda: f64) -> Result<Self> {
        Ok(match self {
            Metric::Warped(w) => Metric::Warped(w.rescaled(lambda)?),
            Metric::Conformal(c) => Metric::Conformal(c.rescaled(lambda)?),
        })
    }
}

pub fn geometric_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && hi > lo && lo > 0.0);
    let ratio = (hi / lo).ln();
    let mut g: Vec<f64> = (0..n).map(|i| lo * (ratio * i as f64 / (n - 1) as f64).exp()).collect();
    g[0] = lo;
    g[n - 1] = hi;
    g
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn conformal(phi: &str, r0: f64) -> Metric {
        Metric::Conformal(ConformalMetric::parse_radial(phi, &HashMap::new(), r0).unwrap())
    }

    #[test]
    fn schwarzschild_basics() {
        let s = ConformalMetric::schwarzschild(1.0).unwrap();
        assert_eq!(s.r0, 0.5);
        assert_eq!(s.phi_at([0.5, 0.0, 0.0]).unwrap(), 2.0);
        let w = s.to_warped().unwrap();
        assert!((w.point(0.5).unwrap().area() - 16.0 * PI).abs() < 1e-12);
        assert_eq!(ConformalMetric::schwarzschild(2.0).unwrap().r0, 1.0);
        assert!(ConformalMetric::schwarzschild(0.0).is_err());
    }

    #[test]
    fn flat_curvatures() {
        let flat = Metric::Warped(RadialMetric::flat(1.0).unwrap());
        for r in [1.0, 2.5, 40.0] {
            assert_eq!(flat.scalar_curvature(r).unwrap(), 0.0);
            assert!((flat.mean_curvature_sphere(r).unwrap() - 2.0 / r).abs() < 1e-15);
        }
        assert_eq!(flat.decay_order().unwrap(), DecayOrder::Exact);
        assert_eq!(flat.adm_mass().unwrap().value, 0.0);
    }

    #[test]
    fn schwarzschild_curvature_and_mass() {
        for m in [1.0, 2.0] {
            let metric = Metric::Conformal(ConformalMetric::schwarzschild(m).unwrap());
            let warped = Metric::Warped(metric.warped().unwrap());
            for r in geometric_grid(0.5 * m, 100.0 * m, 60) {
                assert!(metric.scalar_curvature(r).unwrap().abs() < 1e-9);
                assert!(warped.scalar_curvature(r).unwrap().abs() < 1e-9);
                let hm = metric.warped().unwrap().point(r).unwrap().hawking_mass();
                assert!((hm - m).abs() < 1e-10, "r={r} hawking={hm}");
            }
            assert!(metric.mean_curvature_sphere(0.5 * m).unwrap().abs() < 1e-12);
            let adm = metric.adm_mass().unwrap();
            assert!((adm.value - m).abs() < 1e-9);
            assert!((adm.cross_check.unwrap() - m).abs() < 1e-9);
        }
        let s1 = Metric::Conformal(ConformalMetric::schwarzschild(1.0).unwrap());
        assert!((s1.mean_curvature_sphere(1.0).unwrap() - 8.0 / 27.0).abs() < 1e-14);
        match s1.decay_order().unwrap() {
            DecayOrder::Estimated { tau } => assert!((tau - 1.0).abs() < 0.05, "{tau}"),
            DecayOrder::Exact => panic!("Schwarzschild is not flat"),
        }
    }

    #[test]
    fn conformal_curvature_example() {
        let m = conformal("1 + 1/r - 0.1/r^2", 1.0);
        // R = −8 φ⁻⁵ Δφ, Δ(r⁻²) = 2 r⁻⁴, φ(2) = 1.475
        let expected = -8.0 * (-0.1 * 2.0 / 16.0) / 1.475f64.powi(5);
        let r = m.scalar_curvature(2.0).unwrap();
        assert!((r - expected).abs() < 1e-14);
        assert!((r - 0.014323).abs() < 5e-7);
        let w = Metric::Warped(m.warped().unwrap());
        assert!((w.scalar_curvature(2.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn sign_of_curvature_follows_c2() {
        let grid = geometric_grid(1.0, 1000.0, 200);
        let good = conformal("1 + 1/r - 0.1/r^2", 1.0).check_nonnegative_r(&grid).unwrap();
        assert!(good.ok && good.min_r_value >= 0.0);
        let bad = conformal("1 + 1/r + 0.1/r^2", 1.0).check_nonnegative_r(&grid).unwrap();
        assert!(!bad.ok && bad.min_r_value < 0.0);
        let s = Metric::Conformal(ConformalMetric::schwarzschild(1.0).unwrap());
        let check = s.check_nonnegative_r(&geometric_grid(0.5, 500.0, 200)).unwrap();
        assert!(check.ok && check.min_r_value.abs() < 1e-12);
    }

    #[test]
    fn conformal_mass_is_twice_leading_coefficient() {
        let m = conformal("1 + 1/r - 0.1/r^2", 1.0).adm_mass().unwrap();
        assert!((m.value - 2.0).abs() < 1e-8, "{m:?}");
        assert!((m.cross_check.unwrap() - 2.0).abs() < 1e-8);
    }

    #[test]
    fn spatial_flux_mass_matches_radial() {
        let p = params(&[("c", 0.7)]);
        let spatial = ConformalMetric::parse_spatial("1 + c/sqrt(x^2 + y^2 + z^2)", &p, 1.0).unwrap();
        let m = Metric::Conformal(spatial).adm_mass().unwrap();
        assert!((m.value - 1.4).abs() < 1e-8, "{m:?}");
        // A centred-off perturbation keeps the leading monopole.
        let p = params(&[("c", 0.5)]);
        let shifted = ConformalMetric::parse_spatial("1 + c/sqrt((x - 0.1)^2 + y^2 + z^2)", &p, 1.0).unwrap();
        let m = Metric::Conformal(shifted).adm_mass().unwrap();
        assert!((m.value - 1.0).abs() < 1e-6, "{m:?}");
    }

    #[test]
    fn weak_decay_warns() {
        let m = Metric::Warped(RadialMetric::parse("1 + r^(-0.4)", "r", &HashMap::new(), 1.0).unwrap());
        let d = m.diagnose(1000.0).unwrap();
        match d.decay {
            DecayOrder::Estimated { tau } => assert!((tau - 0.4).abs() < 1e-3, "{tau}"),
            DecayOrder::Exact => panic!(),
        }
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn nonpositive_coefficients_abort() {
        let m = Metric::Warped(RadialMetric::parse("1 - 2/r", "r", &HashMap::new(), 1.0).unwrap());
        assert!(matches!(m.diagnose(100.0), Err(Error::Metric(_))));
        let m = Metric::Warped(RadialMetric::parse("1", "r + 4/r", &HashMap::new(), 1.0).unwrap());
        assert!(matches!(m.diagnose(100.0), Err(Error::Metric(_))));
    }

    #[test]
    fn schwarzschild_boundary_df_vanishes() {
        for m in [0.5, 1.0, 2.0, 3.7] {
            let w = ConformalMetric::schwarzschild(m).unwrap().to_warped().unwrap();
            assert!(w.df_at(0.5 * m).unwrap().abs() < 1e-14);
            Metric::Warped(w).diagnose(1000.0 * m).unwrap();
        }
    }

    #[test]
    fn rescaling_scales_mass_and_curvature() {
        let m = conformal("1 + 0.8/r - 0.2/r^2", 1.2);
        for lambda in [0.5, 2.0, 10.0] {
            let s = m.rescaled(lambda).unwrap();
            assert!((s.r0() - 1.2 * lambda).abs() < 1e-15);
            let ratio = s.adm_mass().unwrap().value / m.adm_mass().unwrap().value;
            assert!((ratio - lambda).abs() < 1e-8);
            let r = 3.0;
            let k = s.scalar_curvature(lambda * r).unwrap() / m.scalar_curvature(r).unwrap();
            assert!((k - 1.0 / (lambda * lambda)).abs() < 1e-10);
        }
    }
}
