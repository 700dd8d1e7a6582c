use std::collections::HashMap;
use std::f64::consts::PI;

use capmono_core::expr::Expr;
use capmono_core::functionals::{
    f_of, f_prime_geometric, g_of, g_prime, hessian_identity_defect, i2_first_variation, identity_defect,
};
use capmono_core::levelset::sample_radial;
use capmono_core::metrics::{ConformalMetric, Metric, RadialMetric};
use capmono_core::potential::radial::RadialPotential;
use proptest::prelude::*;

const TOL: f64 = 1e-12;

fn params(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

/// `φ = 1 + c1/r + c2/r²` with `r0` past the zeros of `φ` and of `f′`.
fn family() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.1f64..2.0, -1.0f64..0.0, 1.1f64..2.0).prop_map(|(c1, c2, factor)| {
        let phi_root = 0.5 * (-c1 + (c1 * c1 - 4.0 * c2).sqrt());
        let disc = c1 * c1 + 12.0 * c2;
        let df_root = if disc >= 0.0 { 0.5 * (c1 + disc.sqrt()) } else { 0.0 };
        (c1, c2, factor * phi_root.max(df_root))
    })
}

fn conformal(c1: f64, c2: f64, r0: f64) -> ConformalMetric {
    ConformalMetric::parse_radial("1 + c1/r + c2/r^2", &params(&[("c1", c1), ("c2", c2)]), r0).unwrap()
}

fn potential(c1: f64, c2: f64, r0: f64) -> RadialPotential {
    RadialPotential::solve(&conformal(c1, c2, r0).to_warped().unwrap(), TOL).unwrap()
}

fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expression_derivative_matches_finite_difference(
        a in -3.0f64..3.0, b in -3.0f64..3.0, c in 0.5f64..3.0, x in 0.5f64..4.0,
    ) {
        let e = Expr::parse("a*r^3 + b*abs(r - 2*c)*exp(-r/c) + sqrt(r + c) - log(r)/r", &["r"], &params(&[("a", a), ("b", b), ("c", c)])).unwrap();
        let d = e.differentiate("r").unwrap();
        prop_assume!((x - 2.0 * c).abs() > 1e-3);
        let fd = central(|r| e.eval(&[r]).unwrap(), x, 1e-5);
        let exact = d.eval(&[x]).unwrap();
        prop_assert!((exact - fd).abs() <= 1e-7 * (1.0 + exact.abs()), "{exact} vs {fd}");
    }

    #[test]
    fn printed_expressions_reparse_to_the_same_function(
        a in -5.0f64..5.0, b in 0.1f64..5.0, x in 0.2f64..3.0, y in -2.0f64..2.0,
    ) {
        let p = params(&[("a", a), ("b", b)]);
        let e = Expr::parse("-a*x^2/(b + y^2) - (x - y)^3 + exp(a*x)^2 - (y^2 + 1)^x", &["x", "y"], &p).unwrap();
        let again = Expr::parse(&e.to_string(), &["x", "y"], &HashMap::new()).unwrap();
        let (v, w) = (e.eval(&[x, y]).unwrap(), again.eval(&[x, y]).unwrap());
        prop_assert!((v - w).abs() <= 1e-14 * (1.0 + v.abs()), "{v} vs {w} for `{e}`");
    }

    #[test]
    fn scalar_curvature_matches_conformal_laplacian((c1, c2, r0) in family(), s in 0.0f64..3.0) {
        // R = −8 Δφ / φ⁵ for φ⁴δ, with Δφ = φ″ + 2φ′/r.
        let r = r0 * (1.0 + s);
        let phi = |r: f64| 1.0 + c1 / r + c2 / (r * r);
        let h = 1e-4 * r;
        let d2 = (phi(r + h) - 2.0 * phi(r) + phi(r - h)) / (h * h);
        let lap = d2 + 2.0 * central(phi, r, h) / r;
        let oracle = -8.0 * lap / phi(r).powi(5);
        let cm = conformal(c1, c2, r0);
        let warped = Metric::Warped(cm.to_warped().unwrap()).scalar_curvature(r).unwrap();
        let direct = Metric::Conformal(cm).scalar_curvature(r).unwrap();
        let scale = 1e-5 * (oracle.abs() + 1.0 / (r * r));
        prop_assert!((warped - oracle).abs() <= scale, "warped {warped} vs {oracle}");
        prop_assert!((direct - oracle).abs() <= scale, "conformal {direct} vs {oracle}");
        // c2 ≤ 0 keeps R ≥ 0 on this family.
        prop_assert!(oracle >= -1e-9 / (r * r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn capacity_and_curvature_scale_covariantly((c1, c2, r0) in family(), lambda in 0.25f64..4.0) {
        let warped = conformal(c1, c2, r0).to_warped().unwrap();
        let base = RadialPotential::solve(&warped, TOL).unwrap();
        let scaled = RadialPotential::solve(&warped.rescaled(lambda).unwrap(), TOL).unwrap();
        prop_assert!((scaled.c - lambda * base.c).abs() <= 1e-9 * lambda * base.c);
        let r = 1.7 * r0;
        let k0 = Metric::Warped(warped.clone()).scalar_curvature(r).unwrap();
        let k1 = Metric::Warped(warped.rescaled(lambda).unwrap()).scalar_curvature(lambda * r).unwrap();
        prop_assert!((k1 * lambda * lambda - k0).abs() <= 1e-9 * (k0.abs() + 1.0 / (r * r)));
        let mass = |m: &RadialMetric| Metric::Warped(m.clone()).adm_mass().unwrap().value;
        let (m0, m1) = (mass(&warped), mass(&warped.rescaled(lambda).unwrap()));
        prop_assert!((m1 - lambda * m0).abs() <= 1e-6 * lambda * m0.abs().max(1e-3));
    }

    #[test]
    fn level_set_moments_follow_their_evolution((c1, c2, r0) in family(), s in 0.05f64..20.0) {
        let pot = potential(c1, c2, r0);
        let c = pot.c;
        let t = c * (0.5 + s);
        let h = 1e-4 * t;
        let i2 = |t: f64| sample_radial(&pot, t).unwrap().i2;
        let sample = sample_radial(&pot, t).unwrap();
        let slope = central(i2, t, h);
        let expected = i2_first_variation(&sample, c);
        prop_assert!((slope - expected).abs() <= 1e-6 * expected.abs().max(1e-3 * sample.i2 / t), "{slope} vs {expected}");

        // G′ is the derivative of G.
        let g = |t: f64| g_of(&sample_radial(&pot, t).unwrap(), c);
        let gp = g_prime(&sample, c);
        prop_assert!((central(g, t, h) - gp).abs() <= 1e-6 * (gp.abs() + PI * c * c / (t * t)), "G′ {gp}");

        // F′ from the geometric formula is the derivative of F and is
        // nonnegative when R ≥ 0.
        let f = |t: f64| f_of(&sample_radial(&pot, t).unwrap(), c);
        let fp = f_prime_geometric(&pot, t).unwrap();
        prop_assert!(fp >= -1e-10, "F′ = {fp}");
        prop_assert!((central(f, t, h) - fp).abs() <= 1e-5 * (fp.abs() + 4.0 * PI), "F′ {fp} vs {}", central(f, t, h));

        prop_assert!(identity_defect(&sample, c) <= 1e-10);
    }

    #[test]
    fn hessian_identity_holds_at_ten_radii((c1, c2, r0) in family()) {
        let pot = potential(c1, c2, r0);
        for k in 0..10 {
            let r = r0 * 1.6f64.powi(k);
            let d = hessian_identity_defect(&pot, r).unwrap();
            prop_assert!(d <= 1e-10, "defect {d} at r = {r}");
        }
    }
}

#[test]
fn identifiers_are_not_prefix_matched() {
    let p = params(&[("m", 1.0)]);
    assert!(Expr::parse("mass + r", &["r"], &p).is_err());
    assert!(Expr::parse("rr", &["r"], &p).is_err());
    assert_eq!(Expr::parse("m + r", &["r"], &p).unwrap().eval(&[2.0]).unwrap(), 3.0);
}
