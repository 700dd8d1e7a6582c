//! The monotone functionals `F` and `G` along the level sets `Σ_t`.
//!
//! With `q = C/2t`,
//!
//! ```text
//! F(t) = 4πt + (t³/C²)(1+q)³(1−3q) I2 − (t²/C)(1+q)² IH
//! G(t) = −πC²/t + (t/4)(1+q)⁴ I2
//! G′(t) = πC²/t² + ¼(1+q)³(1−3q) I2 − (C/4t)(1+q)² IH
//! ```
//!
//! where `I2 = ∫|∇u|²` and `IH = ∫|∇u| H` over `Σ_t`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::levelset::{sample_radial, LevelSetSample};
use crate::metrics::geometric_grid;
use crate::potential::radial::RadialPotential;
use crate::quad::{integrate, Tolerance};

/// The three terms of `F`, for error scaling.
fn f_terms(s: &LevelSetSample, c: f64) -> [f64; 3] {
    let t = s.t;
    let q = c / (2.0 * t);
    [
        4.0 * PI * t,
        t * t * t / (c * c) * (1.0 + q).powi(3) * (1.0 - 3.0 * q) * s.i2,
        -(t * t / c) * (1.0 + q).powi(2) * s.ih,
    ]
}

pub fn f_of(s: &LevelSetSample, c: f64) -> f64 {
    f_terms(s, c).iter().sum()
}

pub fn g_of(s: &LevelSetSample, c: f64) -> f64 {
    let t = s.t;
    let q = c / (2.0 * t);
    -PI * c * c / t + 0.25 * t * (1.0 + q).powi(4) * s.i2
}

pub fn g_prime(s: &LevelSetSample, c: f64) -> f64 {
    let t = s.t;
    let q = c / (2.0 * t);
    PI * c * c / (t * t) + 0.25 * (1.0 + q).powi(3) * (1.0 - 3.0 * q) * s.i2
        - c / (4.0 * t) * (1.0 + q).powi(2) * s.ih
}

/// Defect of `F = (4t³/C²) G′`, relative to the largest term of `F` (the
/// terms cancel when `F` is small, so `|F|` itself is no scale).
pub fn identity_defect(s: &LevelSetSample, c: f64) -> f64 {
    let t = s.t;
    let scale = f_terms(s, c).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    (f_of(s, c) - 4.0 * t * t * t / (c * c) * g_prime(s, c)).abs() / scale
}

/// Right side of the first variation `d/dt I2 = −(C/t²)(1+C/2t)⁻² IH`.
pub fn i2_first_variation(s: &LevelSetSample, c: f64) -> f64 {
    let t = s.t;
    -(c / (t * t)) * (1.0 + c / (2.0 * t)).powi(-2) * s.ih
}

/// `F′` from the geometric formula on the coordinate sphere of radius
/// `r`, where level sets are umbilic round spheres: the Gauss–Bonnet term
/// cancels `4π`, leaving `∫ [R/2 + ¾(4u|∇u|/(1−u²) − H)²] dσ`.
fn f_prime_at_radius(pot: &RadialPotential, r: f64) -> Result<f64> {
    let p = pot.metric.point(r)?;
    let ct = pot.c * pot.tail(r)?;
    let u = 1.0 - ct;
    let one_minus_u2 = ct * (2.0 - ct);
    let grad = pot.c / (p.f * p.f);
    let bracket = 4.0 * u * grad / one_minus_u2 - p.mean_curvature();
    Ok(p.area() * (0.5 * p.scalar_curvature() + 0.75 * bracket * bracket))
}

pub fn f_prime_geometric(pot: &RadialPotential, t: f64) -> Result<f64> {
    f_prime_at_radius(pot, pot.level_radius(t)?)
}

/// Boundary moments entering the second monotonicity formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ABQuantities {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
}

impl ABQuantities {
    /// `A = 2C[π − I2]`, `B = C[2π − 2 I2 − IH]` over `∂M`.
    pub fn from_boundary(boundary: &LevelSetSample, c: f64) -> Self {
        ABQuantities {
            a: 2.0 * c * (PI - boundary.i2),
            b: c * (2.0 * PI - 2.0 * boundary.i2 - boundary.ih),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EndpointValues {
    pub f_start: f64,
    pub g_start: f64,
    /// `8π(m_ADM − C)`, the limit bound of `F`.
    pub f_limit_bound: f64,
    pub g_limit: f64,
}

pub fn endpoint_values(boundary: &LevelSetSample, c: f64, m_adm: f64) -> EndpointValues {
    let ab = ABQuantities::from_boundary(boundary, c);
    EndpointValues { f_start: ab.b, g_start: -ab.a, f_limit_bound: 8.0 * PI * (m_adm - c), g_limit: 0.0 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub t: f64,
    pub level: f64,
    pub area: f64,
    #[serde(rename = "I2")]
    pub i2: f64,
    #[serde(rename = "IH")]
    pub ih: f64,
    #[serde(rename = "IH2")]
    pub ih2: f64,
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "Fprime")]
    pub f_prime: Option<f64>,
    #[serde(rename = "Gprime")]
    pub g_prime: f64,
    pub regular: bool,
    pub components: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneCurve {
    pub c: f64,
    pub m_adm: f64,
    pub points: Vec<CurvePoint>,
}

/// The default sweep: the exact endpoint `C/2`, then `n` log-spaced
/// values from `(C/2)(1 + 1e−9)` to `10³ C`.
pub fn t_grid(c: f64, n: usize) -> Vec<f64> {
    let mut g = vec![0.5 * c];
    g.extend(geometric_grid(0.5 * c * (1.0 + 1e-9), 1e3 * c, n));
    g
}

pub const DEFAULT_T_POINTS: usize = 200;

impl CurvePoint {
    pub fn from_sample(s: &LevelSetSample, c: f64, f_prime: Option<f64>) -> Self {
        CurvePoint {
            t: s.t,
            level: s.level,
            area: s.area,
            i2: s.i2,
            ih: s.ih,
            ih2: s.ih2,
            f: f_of(s, c),
            g: g_of(s, c),
            f_prime,
            g_prime: g_prime(s, c),
            regular: s.regularity().regular,
            components: s.components,
        }
    }

    pub fn sample(&self) -> LevelSetSample {
        LevelSetSample {
            t: self.t,
            level: self.level,
            area: self.area,
            i2: self.i2,
            ih: self.ih,
            ih2: self.ih2,
            components: self.components,
            min_grad: f64::NAN,
            eps_crit: f64::NAN,
            critical_fraction: f64::NAN,
        }
    }
}

impl MonotoneCurve {
    /// Samples a radial potential on `ts` (in parallel; the result does
    /// not depend on scheduling).
    pub fn radial(pot: &RadialPotential, m_adm: f64, ts: &[f64]) -> Result<Self> {
        if ts.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("t-grid must be strictly increasing".into()));
        }
        let points = ts
            .par_iter()
            .map(|&t| {
                let s = sample_radial(pot, t)?;
                let fp = f_prime_geometric(pot, t)?;
                Ok(CurvePoint::from_sample(&s, pot.c, Some(fp)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MonotoneCurve { c: pot.c, m_adm, points })
    }

    pub fn from_samples(samples: &[LevelSetSample], c: f64, m_adm: f64) -> Result<Self> {
        if samples.windows(2).any(|w| !(w[1].t > w[0].t)) {
            return Err(Error::InvalidArgument("samples must be ordered by increasing t".into()));
        }
        let points = samples.iter().map(|s| CurvePoint::from_sample(s, c, None)).collect();
        Ok(MonotoneCurve { c, m_adm, points })
    }

    /// Limit as `t → ∞` of the selected quantity from a least-squares
    /// fit `a + b/t` over the last decade of samples.
    pub fn limit(&self, pick: impl Fn(&CurvePoint) -> f64) -> Option<f64> {
        let t_max = self.points.last()?.t;
        let tail: Vec<&CurvePoint> = self.points.iter().filter(|p| p.t >= 0.1 * t_max && p.regular).collect();
        if tail.len() < 3 {
            return None;
        }
        let xs: Vec<f64> = tail.iter().map(|p| 1.0 / p.t).collect();
        let ys: Vec<f64> = tail.iter().map(|p| pick(p)).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        Some(my - slope * mx)
    }
}

/// Tolerance of the pairwise monotonicity test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AuditTol {
    /// `tol · (1 + |value|)`
    Relative(f64),
    Absolute(f64),
}

impl AuditTol {
    fn at(&self, value: f64) -> f64 {
        match *self {
            AuditTol::Relative(r) => r * (1.0 + value.abs()),
            AuditTol::Absolute(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditOptions {
    pub tol: AuditTol,
    /// Slack in `sup F ≤ 8π(m − C)` and `G ≤ 0`.
    pub bound_tol: f64,
    /// Whether the hypothesis for the `G` claims holds.
    pub check_g: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub index: usize,
    pub t0: f64,
    pub t1: f64,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub options: AuditOptions,
    pub f_violations: Vec<Violation>,
    pub sup_f: f64,
    pub f_limit_bound: f64,
    pub sup_f_ok: bool,
    pub f_limit: Option<f64>,
    /// `None` when no `G` claim is made.
    pub g_violations: Option<Vec<Violation>>,
    pub sup_g: f64,
    pub g_nonpositive_ok: Option<bool>,
    pub g_limit: Option<f64>,
    pub regular_samples: usize,
    pub ok: bool,
}

fn violations(points: &[&CurvePoint], value: impl Fn(&CurvePoint) -> f64, tol: AuditTol) -> Vec<Violation> {
    points
        .windows(2)
        .enumerate()
        .filter_map(|(i, w)| {
            let (a, b) = (value(w[0]), value(w[1]));
            (b < a - tol.at(a)).then(|| Violation { index: i, t0: w[0].t, t1: w[1].t, drop: a - b })
        })
        .collect()
}

/// Pairwise monotonicity of `F` (and of `G` when claimed) on adjacent
/// regular samples, plus the bounds `sup F ≤ 8π(m − C)` and `G ≤ 0`.
pub fn monotonicity_audit(curve: &MonotoneCurve, options: AuditOptions) -> MonotonicityReport {
    let regular: Vec<&CurvePoint> = curve.points.iter().filter(|p| p.regular).collect();
    let f_violations = violations(&regular, |p| p.f, options.tol);
    let sup_f = regular.iter().map(|p| p.f).fold(f64::NEG_INFINITY, f64::max);
    let sup_g = regular.iter().map(|p| p.g).fold(f64::NEG_INFINITY, f64::max);
    let f_limit_bound = 8.0 * PI * (curve.m_adm - curve.c);
    let sup_f_ok = sup_f <= f_limit_bound + options.bound_tol;
    let (g_violations, g_nonpositive_ok) = if options.check_g {
        (Some(violations(&regular, |p| p.g, options.tol)), Some(sup_g <= options.bound_tol))
    } else {
        (None, None)
    };
    let ok = f_violations.is_empty()
        && sup_f_ok
        && g_violations.as_ref().is_none_or(|v| v.is_empty())
        && g_nonpositive_ok.unwrap_or(true);
    MonotonicityReport {
        options,
        f_violations,
        sup_f,
        f_limit_bound,
        sup_f_ok,
        f_limit: curve.limit(|p| p.f),
        g_violations,
        sup_g,
        g_nonpositive_ok,
        g_limit: curve.limit(|p| p.g),
        regular_samples: regular.len(),
        ok,
    }
}

/// `|F(T) − F(t) − ∫_t^T F′ dτ|` with `F′` from the geometric formula.
/// The integral is taken over the region between the level sets in the
/// radius variable (coarea form), `dτ = ρ′(r) dr`.
pub fn div_x_consistency(pot: &RadialPotential, t: f64, big_t: f64) -> Result<f64> {
    if !(big_t > t) {
        return Err(Error::InvalidArgument(format!("need t < T, got t = {t}, T = {big_t}")));
    }
    let c = pot.c;
    let f_at = |t: f64| -> Result<f64> { Ok(f_of(&sample_radial(pot, t)?, c)) };
    let (r1, r2) = (pot.level_radius(t)?, pot.level_radius(big_t)?);
    let integral = integrate(
        |r| {
            let tail = pot.tail(r)?;
            let (a, f) = pot.metric.a_f(r)?;
            let drho = a.sqrt() / (f * f) / (tail * tail);
            Ok(f_prime_at_radius(pot, r)? * drho)
        },
        r1,
        r2,
        Tolerance { abs: 1e-12, rel: 1e-11, max_intervals: 4000 },
    )?;
    Ok((f_at(big_t)? - f_at(t)? - integral.value).abs())
}

/// Defect of the radial Hessian identity `|∇du|² = |∇u|²|h|² + |∇|∇u||²`
/// at radius `r`, both sides evaluated independently: the left from
/// coordinate Christoffel symbols of the warped product, the right from
/// the second fundamental form of the sphere and the radial derivative of
/// `|∇u|`. Relative to the left side.
pub fn hessian_identity_defect(pot: &RadialPotential, r: f64) -> Result<f64> {
    let p = pot.metric.point(r)?;
    let c = pot.c;
    let sa = p.a.sqrt();
    let du = c * sa / (p.f * p.f);
    let ddu = c * (p.da / (2.0 * sa * p.f * p.f) - 2.0 * sa * p.df / p.f.powi(3));
    // ∇du in (r, θ, φ): rr = u″ − Γ^r_rr u′, θθ = −Γ^r_θθ u′ (and φφ alike).
    let h_rr = ddu - p.da / (2.0 * p.a) * du;
    let h_tt = p.f * p.df / p.a * du;
    let lhs = (h_rr / p.a).powi(2) + 2.0 * (h_tt / (p.f * p.f)).powi(2);
    let grad2 = du * du / p.a;
    let h2 = 2.0 * (p.df / (p.f * sa)).powi(2);
    // d/dr (u′/√a) = u″/√a − u′ a′/(2 a^{3/2})
    let dgrad = ddu / sa - du * p.da / (2.0 * p.a * sa);
    let rhs = grad2 * h2 + dgrad * dgrad / p.a;
    Ok((lhs - rhs).abs() / lhs.abs().max(f64::MIN_POSITIVE))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RigidityVerdict {
    pub schwarzschild_like: bool,
    /// Mass of the model, `m = C`, when the verdict fires.
    pub mass: Option<f64>,
    pub max_abs_f: f64,
    pub max_abs_g: f64,
    pub max_area_deviation: f64,
    pub tol: f64,
    /// The largest deviation relative to its threshold, when non-rigid.
    pub cited: Option<String>,
}

/// Schwarzschild-like iff `max|F| ≤ tol·8πC`, `max|G| ≤ tol·πC` and every
/// area matches `4πt²(1+C/2t)⁴` to relative `tol`.
pub fn rigidity_detect(curve: &MonotoneCurve, boundary: &LevelSetSample, tol: f64) -> RigidityVerdict {
    let c = curve.c;
    let mut samples: Vec<(f64, f64, f64, f64)> =
        curve.points.iter().map(|p| (p.t, p.f, p.g, p.area)).collect();
    samples.push((boundary.t, f_of(boundary, c), g_of(boundary, c), boundary.area));
    let (mut max_f, mut max_g, mut max_area) = (0.0f64, 0.0f64, 0.0f64);
    let (mut arg_f, mut arg_g, mut arg_a) = (0.0, 0.0, 0.0);
    for &(t, f, g, area) in &samples {
        let model = 4.0 * PI * t * t * (1.0 + c / (2.0 * t)).powi(4);
        let dev = (area - model).abs() / model;
        if f.abs() > max_f {
            (max_f, arg_f) = (f.abs(), t);
        }
        if g.abs() > max_g {
            (max_g, arg_g) = (g.abs(), t);
        }
        if dev > max_area {
            (max_area, arg_a) = (dev, t);
        }
    }
    let ratios = [
        (max_f / (8.0 * PI * c), format!("max |F| = {max_f:.6e} at t = {arg_f:.6e}")),
        (max_g / (PI * c), format!("max |G| = {max_g:.6e} at t = {arg_g:.6e}")),
        (max_area, format!("relative area deviation {max_area:.6e} at t = {arg_a:.6e}")),
    ];
    let fires = ratios.iter().all(|(r, _)| *r <= tol);
    let cited = if fires {
        None
    } else {
        ratios.iter().max_by(|a, b| a.0.total_cmp(&b.0)).map(|(_, s)| s.clone())
    };
    RigidityVerdict {
        schwarzschild_like: fires,
        mass: fires.then_some(c),
        max_abs_f: max_f,
        max_abs_g: max_g,
        max_area_deviation: max_area,
        tol,
        cited,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::RadialMetric;

    fn flat() -> RadialPotential {
        RadialPotential::solve(&RadialMetric::flat(1.0).unwrap(), 1e-13).unwrap()
    }

    #[test]
    fn flat_closed_forms() {
        let pot = flat();
        for t in [0.5, 1.0, 2.0, 4.0, 37.0] {
            let s = sample_radial(&pot, t).unwrap();
            let f = -8.0 * PI - 3.0 * PI / t;
            let g = PI / (t * t) + PI / (4.0 * t * t * t);
            assert!((f_of(&s, 1.0) - f).abs() < 1e-12 * f.abs(), "F({t})");
            assert!((g_of(&s, 1.0) - g).abs() < 1e-12 * g.abs(), "G({t})");
            let fp = f_prime_geometric(&pot, t).unwrap();
            assert!((fp - 3.0 * PI / (t * t)).abs() < 1e-10 * fp, "F′({t}) = {fp}");
        }
        let s = sample_radial(&pot, 1.0).unwrap();
        assert!((g_prime(&s, 1.0) + 2.75 * PI).abs() < 1e-12);
        assert!(identity_defect(&s, 1.0) < 1e-14);
    }

    #[test]
    fn flat_endpoints() {
        let pot = flat();
        let s = sample_radial(&pot, 0.5).unwrap();
        let e = endpoint_values(&s, 1.0, 0.0);
        assert!((e.f_start + 14.0 * PI).abs() < 1e-12);
        assert!((e.g_start - 6.0 * PI).abs() < 1e-12);
        assert!((e.f_limit_bound + 8.0 * PI).abs() < 1e-12);
        assert!((e.f_start - f_of(&s, 1.0)).abs() < 1e-12);
        assert!((e.g_start - g_of(&s, 1.0)).abs() < 1e-12);
    }

    #[test]
    fn flat_divergence_consistency() {
        let pot = flat();
        assert!(div_x_consistency(&pot, 1.0, 2.0).unwrap() < 1e-9);
        assert!(div_x_consistency(&pot, 0.5, 10.0).unwrap() < 1e-8);
    }

    #[test]
    fn flat_audit_and_limits() {
        let pot = flat();
        let curve = MonotoneCurve::radial(&pot, 0.0, &t_grid(1.0, DEFAULT_T_POINTS)).unwrap();
        assert_eq!(curve.points.len(), 201);
        let opts = AuditOptions { tol: AuditTol::Relative(1e-8), bound_tol: 1e-6, check_g: false };
        let audit = monotonicity_audit(&curve, opts);
        assert!(audit.ok && audit.f_violations.is_empty() && audit.g_violations.is_none());
        assert!((audit.f_limit.unwrap() + 8.0 * PI).abs() < 1e-6);
        // G decreases on flat space, so claiming it must fail.
        let claimed = monotonicity_audit(&curve, AuditOptions { check_g: true, ..opts });
        assert!(!claimed.g_violations.unwrap().is_empty());
        let boundary = sample_radial(&pot, 0.5).unwrap();
        let verdict = rigidity_detect(&curve, &boundary, 1e-8);
        assert!(!verdict.schwarzschild_like);
        assert!((verdict.max_abs_f - 14.0 * PI).abs() < 1e-9, "{verdict:?}");
    }

    #[test]
    fn t_grid_shape() {
        let g = t_grid(2.0, 200);
        assert_eq!(g[0], 1.0);
        assert!((g[1] - (1.0 + 1e-9)).abs() < 1e-15);
        assert_eq!(*g.last().unwrap(), 2000.0);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}
