//! Mass–capacity and area–capacity inequalities, their hypotheses and the
//! gating that decides when a violation is a contradiction.

use std::f64::consts::PI;

use serde::Serialize;

use crate::functionals::ABQuantities;
use crate::levelset::LevelSetSample;

/// Width below which `1 − 4C|∇u|` counts as zero.
pub const EPS_D: f64 = 1e-9;
/// Slack in `H ≤ 0` at degenerate points.
pub const EPS_H: f64 = 1e-9;

/// Interval of admissible `α`; the left end is open when it is the
/// structural bound `−1/(2C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaInterval {
    pub lo: f64,
    pub lo_open: bool,
    pub hi: f64,
    pub hi_open: bool,
}

impl AlphaInterval {
    pub fn structural(c: f64) -> Self {
        AlphaInterval { lo: -0.5 / c, lo_open: true, hi: 0.5 / c, hi_open: false }
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && (self.lo_open || self.hi_open))
    }

    pub fn contains(&self, alpha: f64) -> bool {
        let above = if self.lo_open { alpha > self.lo } else { alpha >= self.lo };
        let below = if self.hi_open { alpha < self.hi } else { alpha <= self.hi };
        above && below
    }

    /// A representative point: the right end if closed, else the midpoint.
    pub fn pick(&self) -> f64 {
        if !self.hi_open {
            self.hi
        } else {
            0.5 * (self.lo + self.hi)
        }
    }
}

/// Pointwise boundary data `(H, |∇u|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundaryPoint {
    pub h: f64,
    pub grad: f64,
}

/// Intersection over the samples of `{α : H ≤ α(1 − 4C|∇u|)}` with
/// `(−1/(2C), 1/(2C)]`. `None` when infeasible.
pub fn alpha_feasible(points: &[BoundaryPoint], c: f64) -> Option<AlphaInterval> {
    let mut iv = AlphaInterval::structural(c);
    for p in points {
        let d = 1.0 - 4.0 * c * p.grad;
        if d.abs() <= EPS_D {
            if p.h > EPS_H {
                return None;
            }
        } else if d > 0.0 {
            let bound = p.h / d;
            if bound > iv.lo || (bound == iv.lo && iv.lo_open) {
                iv.lo = bound;
                iv.lo_open = false;
            }
        } else {
            let bound = p.h / d;
            if bound < iv.hi {
                iv.hi = bound;
                iv.hi_open = false;
            }
        }
        if iv.is_empty() {
            return None;
        }
    }
    Some(iv)
}

/// `B ≥ (1 − 2Cα) A` up to `1e−10 C`.
pub fn weak_condition_check(ab: ABQuantities, c: f64, alpha: f64) -> bool {
    ab.b >= (1.0 - 2.0 * c * alpha) * ab.a - 1e-10 * c
}

/// An admissible `α` satisfying the weak condition, if any. The factor
/// `1 − 2Cα` ranges over `[0, 2)`, so `α = 1/(2C)` is optimal when
/// `A ≥ 0`, and `α` just inside the open left end otherwise.
pub fn weak_condition_witness(ab: ABQuantities, c: f64) -> Option<f64> {
    let alpha = if ab.a >= 0.0 { 0.5 / c } else { -0.5 / c * (1.0 - 1e-12) };
    weak_condition_check(ab, c, alpha).then_some(alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HypothesisReport {
    /// User-declared `H₂(M, ∂M; ℤ) = 0`; not computable from samples.
    pub h2_trivial: bool,
    pub alpha_interval: Option<AlphaInterval>,
    pub weak_condition: bool,
    pub weak_alpha: Option<f64>,
    pub nonnegative_r: bool,
    pub connected_level_sets: bool,
    /// Opt-in: accept the weak condition in place of the pointwise one.
    pub use_weak_condition: bool,
    pub notes: Vec<String>,
}

impl HypothesisReport {
    pub fn new(
        h2_trivial: bool,
        boundary_points: &[BoundaryPoint],
        ab: ABQuantities,
        c: f64,
        nonnegative_r: bool,
        connected_level_sets: bool,
        use_weak_condition: bool,
    ) -> Self {
        let alpha_interval = alpha_feasible(boundary_points, c);
        let weak_alpha = weak_condition_witness(ab, c);
        let mut notes = Vec::new();
        if alpha_interval.is_none() {
            notes.push("no admissible α satisfies H ≤ α(1 − 4C|∇u|) on the boundary".to_string());
        }
        if !nonnegative_r {
            notes.push("scalar curvature is negative somewhere; no theorem applies".to_string());
        }
        if !connected_level_sets {
            notes.push("a regular level set is disconnected; the topological hypothesis fails".to_string());
        }
        if !h2_trivial {
            notes.push("H₂(M, ∂M; ℤ) = 0 is not declared".to_string());
        }
        HypothesisReport {
            h2_trivial,
            alpha_interval,
            weak_condition: weak_alpha.is_some(),
            weak_alpha,
            nonnegative_r,
            connected_level_sets,
            use_weak_condition,
            notes,
        }
    }

    /// Hypotheses of the first monotonicity formula.
    pub fn first_gate(&self) -> Gate {
        Gate::new(vec![
            ("h2_trivial", self.h2_trivial),
            ("nonnegative_R", self.nonnegative_r),
            ("connected_level_sets", self.connected_level_sets),
        ])
    }

    /// Hypotheses of the second formula: the first plus the boundary
    /// condition (or its weak form when opted in).
    pub fn second_gate(&self) -> Gate {
        let mut conds = self.first_gate().conditions;
        if self.use_weak_condition {
            conds.push(("alpha_or_weak_condition", self.alpha_interval.is_some() || self.weak_condition));
        } else {
            conds.push(("alpha_feasible", self.alpha_interval.is_some()));
        }
        Gate::new(conds)
    }
}

/// A conjunction of named conditions; a margin is asserted iff all hold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gate {
    pub conditions: Vec<(&'static str, bool)>,
    pub open: bool,
}

impl Gate {
    fn new(conditions: Vec<(&'static str, bool)>) -> Self {
        let open = conditions.iter().all(|(_, v)| *v);
        Gate { conditions, open }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassCapacity {
    pub lhs: f64,
    pub central_term: f64,
    pub margin: f64,
    /// `central_term − 1 − B/(8πC)`.
    pub consistency_defect: f64,
}

/// `m/C` against `5/4 + IH2/(64π) − (1/4π)[I2 + IH/2 + IH2/16]`.
pub fn mass_capacity_margin(m_adm: f64, c: f64, boundary: &LevelSetSample) -> MassCapacity {
    let central = 1.25 + boundary.ih2 / (64.0 * PI)
        - (boundary.i2 + 0.5 * boundary.ih + boundary.ih2 / 16.0) / (4.0 * PI);
    let ab = ABQuantities::from_boundary(boundary, c);
    let lhs = m_adm / c;
    MassCapacity {
        lhs,
        central_term: central,
        margin: lhs - central,
        consistency_defect: central - 1.0 - ab.b / (8.0 * PI * c),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Margin {
    pub value: f64,
    /// `value / C`.
    pub ratio: f64,
    pub asserted: bool,
    /// Asserted and below `−tol·C`.
    pub violated: bool,
}

impl Margin {
    fn new(value: f64, c: f64, asserted: bool, tol: f64) -> Self {
        Margin { value, ratio: value / c, asserted, violated: asserted && value < -tol * c }
    }
}

/// Relative slack (times `C`) before an asserted margin counts as violated.
pub const ASSERT_TOL: f64 = 1e-8;

pub fn bray_check(m_adm: f64, c: f64, hyp: &HypothesisReport) -> Margin {
    Margin::new(m_adm - c, c, hyp.second_gate().open, ASSERT_TOL)
}

pub fn area_capacity_margin(boundary_area: f64, c: f64, hyp: &HypothesisReport) -> Margin {
    Margin::new((boundary_area / (16.0 * PI)).sqrt() - c, c, hyp.second_gate().open, ASSERT_TOL)
}

/// `area(Σ_t) − 4πt²(1 + C/2t)⁴`.
pub fn levelset_area_margin(sample: &LevelSetSample, c: f64) -> f64 {
    let t = sample.t;
    sample.area - 4.0 * PI * t * t * (1.0 + c / (2.0 * t)).powi(4)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelAreaMargin {
    pub t: f64,
    pub margin: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub mass_capacity: MassCapacity,
    /// `m/C ≥ central term`, gated by the first formula's hypotheses.
    pub mass_capacity_assertion: Margin,
    /// `central term ≥ 1`, gated by the second formula's hypotheses.
    pub central_term_assertion: Margin,
    pub bray: Margin,
    pub area_capacity: Margin,
    pub levelset_area: Vec<LevelAreaMargin>,
    /// Smallest level-set area margin relative to the model area.
    pub levelset_area_min_relative: f64,
    pub levelset_area_asserted: bool,
    pub levelset_area_violated: bool,
    pub first_gate: Gate,
    pub second_gate: Gate,
    pub violated: bool,
}

/// Every margin with its gate. `level_tol` is the slack for the level-set
/// area bound, relative to the model area.
pub fn inequality_report(
    m_adm: f64,
    c: f64,
    boundary: &LevelSetSample,
    levels: &[LevelSetSample],
    hyp: &HypothesisReport,
    level_tol: f64,
) -> InequalityReport {
    let mc = mass_capacity_margin(m_adm, c, boundary);
    let first = hyp.first_gate();
    let second = hyp.second_gate();
    let mass_capacity_assertion = Margin::new(mc.margin, c, first.open, ASSERT_TOL);
    let central_term_assertion = Margin::new(mc.central_term - 1.0, c, second.open, ASSERT_TOL);
    let bray = bray_check(m_adm, c, hyp);
    let area_capacity = area_capacity_margin(boundary.area, c, hyp);
    let levelset_area: Vec<LevelAreaMargin> = levels
        .iter()
        .filter(|s| s.regularity().regular)
        .map(|s| {
            let margin = levelset_area_margin(s, c);
            let model = s.area - margin;
            LevelAreaMargin { t: s.t, margin, relative: margin / model }
        })
        .collect();
    let min_rel = levelset_area.iter().map(|m| m.relative).fold(f64::INFINITY, f64::min);
    let levelset_area_violated = second.open && min_rel < -level_tol;
    let violated = mass_capacity_assertion.violated
        || central_term_assertion.violated
        || bray.violated
        || area_capacity.violated
        || levelset_area_violated;
    InequalityReport {
        mass_capacity: mc,
        mass_capacity_assertion,
        central_term_assertion,
        bray,
        area_capacity,
        levelset_area,
        levelset_area_min_relative: min_rel,
        levelset_area_asserted: second.open,
        levelset_area_violated,
        first_gate: first,
        second_gate: second,
        violated,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn boundary(area: f64, i2: f64, ih: f64, ih2: f64, t: f64) -> LevelSetSample {
        LevelSetSample {
            t,
            level: 0.0,
            area,
            i2,
            ih,
            ih2,
            components: 1,
            min_grad: 1.0,
            eps_crit: 1e-3,
            critical_fraction: 0.0,
        }
    }

    #[test]
    fn alpha_interval_cases() {
        // Schwarzschild m = 1: H = 0, |∇u| = 1/4.
        let iv = alpha_feasible(&[BoundaryPoint { h: 0.0, grad: 0.25 }], 1.0).unwrap();
        assert_eq!(iv, AlphaInterval::structural(1.0));
        // Flat: H = 2, |∇u| = 1 → α ≤ −2/3.
        assert!(alpha_feasible(&[BoundaryPoint { h: 2.0, grad: 1.0 }], 1.0).is_none());
        // Truncated Schwarzschild: H = 8/27, |∇u| = 1.5/5.0625 → α ≤ −8/21.
        assert!(alpha_feasible(&[BoundaryPoint { h: 8.0 / 27.0, grad: 1.5 / 5.0625 }], 1.5).is_none());
        // H < 0 with d > 0 keeps α = 0 admissible.
        let iv = alpha_feasible(&[BoundaryPoint { h: -0.1, grad: 0.1 }], 1.0).unwrap();
        assert!(iv.contains(0.0) && !iv.contains(-0.5) && iv.contains(0.5));
    }

    #[test]
    fn right_end_is_closed() {
        // Constraint forcing α ≥ 1/(2C) exactly.
        let c = 1.0;
        let grad = 0.125; // d = 1/2
        let iv = alpha_feasible(&[BoundaryPoint { h: 0.25, grad }], c).unwrap();
        assert_eq!((iv.lo, iv.hi), (0.5, 0.5));
        assert!(iv.contains(0.5));
    }

    #[test]
    fn weak_condition_examples() {
        let pi = PI;
        assert!(weak_condition_check(ABQuantities { a: 0.0, b: 0.0 }, 1.0, 0.3));
        assert!(!weak_condition_check(ABQuantities { a: -6.0 * pi, b: -14.0 * pi }, 1.0, 0.0));
        assert!(!weak_condition_check(ABQuantities { a: -7.0 * pi / 3.0, b: -5.0 * pi }, 1.5, 0.0));
    }

    #[test]
    fn flat_and_truncated_margins() {
        let pi = PI;
        let flat = boundary(4.0 * pi, 4.0 * pi, 8.0 * pi, 16.0 * pi, 0.5);
        let mc = mass_capacity_margin(0.0, 1.0, &flat);
        assert!((mc.central_term + 0.75).abs() < 1e-12 && (mc.margin - 0.75).abs() < 1e-12);
        assert!(mc.consistency_defect.abs() < 1e-12);
        let k = 16.0 * pi / 9.0;
        let trunc = boundary(81.0 * pi / 4.0, k, k, k, 0.75);
        let mc = mass_capacity_margin(1.0, 1.5, &trunc);
        assert!((mc.central_term - 7.0 / 12.0).abs() < 1e-12);
        assert!((mc.margin - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn gating_shields_informational_margins() {
        let pi = PI;
        let flat = boundary(4.0 * pi, 4.0 * pi, 8.0 * pi, 16.0 * pi, 0.5);
        let ab = ABQuantities::from_boundary(&flat, 1.0);
        let hyp = HypothesisReport::new(true, &[BoundaryPoint { h: 2.0, grad: 1.0 }], ab, 1.0, true, true, false);
        let bray = bray_check(0.0, 1.0, &hyp);
        assert!(!bray.asserted && !bray.violated && bray.value == -1.0);
        let area = area_capacity_margin(4.0 * pi, 1.0, &hyp);
        assert!((area.value + 0.5).abs() < 1e-15 && !area.asserted);
        let report = inequality_report(0.0, 1.0, &flat, &[], &hyp, 1e-8);
        assert!(report.mass_capacity_assertion.asserted && !report.violated);
    }
}
