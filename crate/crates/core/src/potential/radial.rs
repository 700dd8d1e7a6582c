//! Capacitary potential of a warped product.
//!
//! In radial symmetry the potential is explicit. With
//! `T(r) = ∫_r^∞ √a/f² dr` the capacity is `C = 1/T(r0)` and
//! `u(r) = 1 − C T(r)`. `T` is tabulated at geometric knots; the
//! unbounded piece is integrated after the substitution `s = 1/r`, so no
//! truncation radius enters.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::RadialMetric;
use crate::quad::{integrate, Tolerance};

/// Knots per doubling of the radius.
const KNOTS_PER_OCTAVE: usize = 4;
/// Knots cover `[r0, r0·2^OCTAVES]`; beyond that the tail substitution
/// is applied directly.
const OCTAVES: usize = 24;

/// Smallest admissible quadrature tolerance.
pub const MIN_TOL: f64 = 1e-13;

#[derive(Debug, Clone)]
pub struct RadialPotential {
    pub metric: RadialMetric,
    /// Capacity; also the normalisation constant of `u`.
    pub c: f64,
    pub tol: f64,
    knots: Vec<f64>,
    /// `T` at each knot.
    tails: Vec<f64>,
}

/// Both capacity estimates plus the flux through interior level sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Capacity {
    pub c_flux: f64,
    pub c_energy: f64,
    /// `(t, (1/4π)∫_Σt |∇u| dσ)` on interior level sets.
    pub level_fluxes: Vec<(f64, f64)>,
    /// Largest deviation of `u` computed by forward quadrature from
    /// `1 − C T`, relative to 1.
    pub residual: f64,
    pub consistent: bool,
}

/// The reparametrisation `t = ρ = (C/2)(1+u)/(1−u)` and its inverse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FakeDistance {
    pub c: f64,
}

impl FakeDistance {
    /// Level value `(1 − C/2t)/(1 + C/2t)` of `Σ_t`.
    pub fn level(&self, t: f64) -> Result<f64> {
        self.check(t)?;
        let q = self.c / (2.0 * t);
        Ok((1.0 - q) / (1.0 + q))
    }

    pub fn of_level(&self, u: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&u) {
            return Err(Error::InvalidArgument(format!("level {u} outside [0, 1)")));
        }
        Ok(0.5 * self.c * (1.0 + u) / (1.0 - u))
    }

    fn check(&self, t: f64) -> Result<()> {
        // Rounding slack so that t = C/2 computed elsewhere is accepted.
        if t.is_finite() && t >= 0.5 * self.c * (1.0 - 1e-14) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("t = {t} is below C/2 = {}", 0.5 * self.c)))
        }
    }
}

/// `√a/f²` at `r`.
fn density(metric: &RadialMetric, r: f64) -> Result<f64> {
    let (a, f) = metric.a_f(r)?;
    if !(a > 0.0 && f > 0.0) {
        return Err(Error::Metric(format!("a = {a}, f = {f} at r = {r}: both must be positive")));
    }
    Ok(a.sqrt() / (f * f))
}

/// `∫_r^∞ √a/f²` via `s = 1/r`.
fn tail(metric: &RadialMetric, r: f64, tol: f64) -> Result<f64> {
    check_integrable(metric, r)?;
    let e = integrate(
        |s| {
            // The rule never samples s = 0.
            let rr = 1.0 / s;
            Ok(density(metric, rr)? * rr * rr)
        },
        0.0,
        1.0 / r,
        Tolerance::relative(tol),
    )
    .map_err(|e| match e {
        Error::Quadrature { .. } => Error::ParabolicEnd(format!("tail integral from r = {r} failed to converge: {e}")),
        other => other,
    })?;
    Ok(e.value)
}

/// The substituted integrand `√a r²/f²` must stay bounded as `r → ∞`;
/// growth means the end is parabolic (zero capacity).
fn check_integrable(metric: &RadialMetric, r: f64) -> Result<()> {
    let probe = |rr: f64| -> Result<f64> { Ok(density(metric, rr)? * rr * rr) };
    let radii = [1e6, 1e9, 1e12].map(|k| k * r.max(1.0));
    let v0 = probe(radii[0])?;
    let v2 = probe(radii[2])?;
    if !v2.is_finite() || v2 > 10.0 * v0.max(1e-300) {
        return Err(Error::ParabolicEnd(format!(
            "√a r²/f² grows from {v0:.3e} at r = {:.1e} to {v2:.3e} at r = {:.1e}",
            radii[0], radii[2]
        )));
    }
    Ok(())
}

impl RadialPotential {
    pub fn solve(metric: &RadialMetric, tol: f64) -> Result<RadialPotential> {
        if !(tol >= MIN_TOL && tol < 1.0) {
            return Err(Error::InvalidArgument(format!("tolerance {tol} must lie in [{MIN_TOL}, 1)")));
        }
        let r0 = metric.r0;
        let count = KNOTS_PER_OCTAVE * OCTAVES + 1;
        let knots: Vec<f64> =
            (0..count).map(|i| r0 * 2f64.powf(i as f64 / KNOTS_PER_OCTAVE as f64)).collect();
        let mut tails = vec![0.0; count];
        tails[count - 1] = tail(metric, knots[count - 1], tol)?;
        for i in (0..count - 1).rev() {
            let piece = integrate(|r| density(metric, r), knots[i], knots[i + 1], Tolerance::relative(tol))?;
            tails[i] = tails[i + 1] + piece.value;
        }
        let total = tails[0];
        if !(total.is_finite() && total > 0.0) {
            return Err(Error::ParabolicEnd(format!("∫ √a/f² = {total}")));
        }
        Ok(RadialPotential { metric: metric.clone(), c: 1.0 / total, tol, knots, tails })
    }

    pub fn r0(&self) -> f64 {
        self.metric.r0
    }

    pub fn fake(&self) -> FakeDistance {
        FakeDistance { c: self.c }
    }

    /// `T(r) = ∫_r^∞ √a/f²`.
    pub fn tail(&self, r: f64) -> Result<f64> {
        let r0 = self.r0();
        if !(r.is_finite() && r >= r0 * (1.0 - 1e-14)) {
            return Err(Error::InvalidArgument(format!("radius {r} lies inside the boundary r0 = {r0}")));
        }
        let r = r.max(r0);
        let last = *self.knots.last().expect("knots");
        if r >= last {
            return tail(&self.metric, r, self.tol);
        }
        let k = self.knots.partition_point(|&x| x <= r);
        let (lo, hi) = (self.knots[k - 1], self.knots[k]);
        // Integrate over the shorter of the two sub-intervals.
        if r - lo < hi - r {
            let e = integrate(|s| density(&self.metric, s), lo, r, Tolerance::relative(self.tol))?;
            Ok(self.tails[k - 1] - e.value)
        } else {
            let e = integrate(|s| density(&self.metric, s), r, hi, Tolerance::relative(self.tol))?;
            Ok(self.tails[k] + e.value)
        }
    }

    pub fn u(&self, r: f64) -> Result<f64> {
        Ok(1.0 - self.c * self.tail(r)?)
    }

    /// `du/dr = C √a/f²`.
    pub fn du_dr(&self, r: f64) -> Result<f64> {
        Ok(self.c * density(&self.metric, r)?)
    }

    /// `|∇u| = C/f²`.
    pub fn grad_norm(&self, r: f64) -> Result<f64> {
        let (_, f) = self.metric.a_f(r)?;
        Ok(self.c / (f * f))
    }

    /// `ρ(r) = (C/2)(1+u)/(1−u) = 1/T − C/2`.
    pub fn fake_distance(&self, r: f64) -> Result<f64> {
        Ok(1.0 / self.tail(r)? - 0.5 * self.c)
    }

    /// Radius of `Σ_t = {ρ = t}`: bisection on the knot table, then Newton
    /// on `T(r) = 1/(t + C/2)` to `1e−12` relative.
    pub fn level_radius(&self, t: f64) -> Result<f64> {
        self.fake().check(t)?;
        let r0 = self.r0();
        let target = 1.0 / (t + 0.5 * self.c);
        if target >= self.tails[0] {
            return Ok(r0);
        }
        // Bracket: T is decreasing.
        let k = self.tails.partition_point(|&v| v > target);
        let (mut lo, mut hi) = if k < self.knots.len() {
            (self.knots[k - 1], self.knots[k])
        } else {
            let mut lo = *self.knots.last().expect("knots");
            let mut hi = 2.0 * lo;
            while self.tail(hi)? > target {
                lo = hi;
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::Solver(format!("level radius for t = {t} is unbounded")));
                }
            }
            (lo, hi)
        };
        for _ in 0..8 {
            let mid = 0.5 * (lo + hi);
            if self.tail(mid)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut r = 0.5 * (lo + hi);
        for _ in 0..100 {
            let g = self.tail(r)? - target;
            if g == 0.0 {
                return Ok(r);
            }
            if g > 0.0 {
                lo = r;
            } else {
                hi = r;
            }
            let next = r + g / density(&self.metric, r)?;
            if next > lo && next < hi {
                let done = (next - r).abs() <= 1e-13 * r;
                r = next;
                if done {
                    return Ok(r);
                }
            } else {
                r = 0.5 * (lo + hi);
            }
            if hi - lo <= 1e-13 * r {
                return Ok(r);
            }
        }
        Err(Error::Solver(format!("level radius for t = {t} did not converge (bracket [{lo}, {hi}])")))
    }

    /// Flux and energy capacities, the flux through five interior level
    /// sets, and the integrated residual: `u` by forward quadrature
    /// from `r0` against `1 − C T`.
    pub fn capacity(&self) -> Result<Capacity> {
        let r0 = self.r0();
        let flux_at = |r: f64| -> Result<f64> {
            let p = self.metric.point(r)?;
            let grad = self.du_dr(r)? / p.a.sqrt();
            Ok(grad * p.area() / (4.0 * PI))
        };
        let c_flux = flux_at(r0)?;
        // (1/4π)∫|∇u|² dμ = ∫ (u′)² f²/√a dr, in the substituted form.
        let energy = |r: f64| -> Result<f64> {
            let (a, f) = self.metric.a_f(r)?;
            let du = self.du_dr(r)?;
            Ok(du * du * f * f / a.sqrt())
        };
        let split = 2.0 * r0;
        let tol = Tolerance::relative(self.tol);
        let near = integrate(energy, r0, split, tol)?.value;
        let far = integrate(
            |s| {
                let r = 1.0 / s;
                Ok(energy(r)? * r * r)
            },
            0.0,
            1.0 / split,
            tol,
        )?
        .value;
        let c_energy = near + far;

        let mut level_fluxes = Vec::new();
        let mut residual: f64 = 0.0;
        for t in [1.5, 2.0, 4.0, 10.0, 100.0].map(|k| 0.5 * self.c * k) {
            let r = self.level_radius(t)?;
            level_fluxes.push((t, flux_at(r)?));
            let forward = self.c * integrate(|s| density(&self.metric, s), r0, r, tol)?.value;
            residual = residual.max((forward - self.u(r)?).abs());
        }
        let limit = 1e-8 * self.c;
        let consistent = (c_flux - c_energy).abs() <= limit
            && level_fluxes.iter().all(|(_, f)| (f - c_flux).abs() <= limit)
            && residual <= 1e-8;
        Ok(Capacity { c_flux, c_energy, level_fluxes, residual, consistent })
    }
}
