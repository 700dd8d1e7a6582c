//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//!
//! Criteria run one after another so that their runtimes are measured
//! without competing for cores.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use capmono::config::ExperimentConfig;
use capmono::pipeline::{run_audit, run_grid_validate, run_sweep, AuditBody};
use capmono_core::functionals::{div_x_consistency, f_prime_geometric};
use capmono_core::metrics::Metric;
use capmono_core::potential::radial::RadialPotential;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> Result<ExperimentConfig, String> {
    ExperimentConfig::load(&configs_dir().join(name)).map_err(|e| format!("{name}: {e}"))
}

fn audit(name: &str) -> Result<AuditBody, String> {
    run_audit(&load(name)?).map_err(|e| format!("{name}: {e}"))
}

/// Collects failed checks of one criterion.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    count: usize,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.count += 1;
        if !ok {
            self.failures.push(what());
        }
    }

    fn abs(&mut self, what: &str, value: f64, expected: f64, tol: f64) {
        let err = (value - expected).abs();
        self.check(err <= tol, || format!("{what} = {value:.15e}, expected {expected:.15e} (|err| {err:.2e} > {tol:.0e})"));
    }

    fn rel(&mut self, what: &str, value: f64, expected: f64, tol: f64) {
        let err = (value - expected).abs() / expected.abs();
        self.check(err <= tol, || format!("{what} = {value:.15e}, expected {expected:.15e} (rel {err:.2e} > {tol:.0e})"));
    }

    fn runtime(&mut self, start: Instant, limit: Duration) {
        let took = start.elapsed();
        self.check(took < limit, || format!("runtime {took:.2?} exceeds {limit:?}"));
    }

    fn finish(self, summary: String) -> Outcome {
        if self.failures.is_empty() {
            Ok(format!("{} checks; {summary}", self.count))
        } else {
            Err(format!("{} of {} checks failed: {}", self.failures.len(), self.count, self.failures.join("; ")))
        }
    }
}

fn schwarzschild_suite() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let mut worst_f: f64 = 0.0;
    for (file, m) in [("schwarzschild.cfg", 1.0), ("schwarzschild2.cfg", 2.0)] {
        let b = audit(file)?;
        c.abs(&format!("m={m}: C"), b.capacity.c, m, 1e-9);
        c.abs(&format!("m={m}: |∇u| on ∂M"), b.boundary.min_grad, 1.0 / (4.0 * m), 1e-9);
        c.rel(&format!("m={m}: area(∂M)"), b.boundary.area, 16.0 * PI * m * m, 1e-8);
        c.check(b.curve.points.len() == 201, || format!("m={m}: {} curve samples, expected 1 + 200", b.curve.points.len()));
        for p in &b.curve.points {
            worst_f = worst_f.max(p.f.abs() / (8.0 * PI * m));
            c.check(p.f.abs() <= 1e-8 * 8.0 * PI * m, || format!("m={m}: |F({:.4e})| = {:.3e}", p.t, p.f.abs()));
            c.check(p.g.abs() <= 1e-8 * PI * m, || format!("m={m}: |G({:.4e})| = {:.3e}", p.t, p.g.abs()));
        }
        c.check(b.rigidity.schwarzschild_like, || format!("m={m}: rigidity detector did not fire: {:?}", b.rigidity.cited));
        c.check(b.rigidity.mass.is_some_and(|x| (x - m).abs() <= 1e-9), || format!("m={m}: rigidity mass {:?}", b.rigidity.mass));
        let i = &b.inequalities;
        let cap = b.capacity.c;
        let margins = [
            ("mass-capacity", i.mass_capacity.margin * cap),
            ("central term − 1", (i.mass_capacity.central_term - 1.0) * cap),
            ("bray", i.bray.value),
            ("area-capacity", i.area_capacity.value),
            ("level-set area (relative, × C)", i.levelset_area_min_relative * cap),
        ];
        for (name, v) in margins {
            c.check(v.abs() <= 1e-8 * m, || format!("m={m}: {name} margin {v:.3e}"));
        }
        c.check(!b.verdict.theorem_violation, || format!("m={m}: violations {:?}", b.verdict.violations));
    }
    c.runtime(start, Duration::from_secs(2));
    c.finish(format!("max |F|/8πm = {worst_f:.1e}, {:.2?}", start.elapsed()))
}

fn flat_suite() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let cfg = load("flat.cfg")?;
    let b = run_audit(&cfg).map_err(|e| e.to_string())?;
    c.abs("C", b.capacity.c, 1.0, 1e-9);
    c.abs("m_ADM", b.adm_mass.value, 0.0, 1e-9);
    let Metric::Warped(w) = cfg.metric.build().map_err(|e| e.to_string())? else {
        return Err("flat config did not build a warped metric".into());
    };
    let pot = RadialPotential::solve(&w, cfg.solver.tol).map_err(|e| e.to_string())?;
    let mut n = 0;
    for p in b.curve.points.iter().filter(|p| (0.5..=100.0).contains(&p.t)) {
        n += 1;
        let t = p.t;
        c.rel(&format!("F({t:.4e})"), p.f, -8.0 * PI - 3.0 * PI / t, 1e-7);
        c.rel(&format!("G({t:.4e})"), p.g, PI / (t * t) + PI / (4.0 * t * t * t), 1e-7);
        let fp = f_prime_geometric(&pot, t).map_err(|e| e.to_string())?;
        c.rel(&format!("F′({t:.4e})"), fp, 3.0 * PI / (t * t), 1e-6);
        c.check(p.f_prime.is_some_and(|x| x == fp), || format!("curve F′ at {t:.4e} differs from the geometric value"));
    }
    c.check(n >= 100, || format!("only {n} samples in [0.5, 100]"));
    c.check(b.hypothesis.alpha_interval.is_none(), || format!("α-feasibility returned {:?}", b.hypothesis.alpha_interval));
    c.abs("central term", b.inequalities.mass_capacity.central_term, -0.75, 1e-9);
    c.abs("mass-capacity margin", b.inequalities.mass_capacity.margin, 0.75, 1e-9);
    c.runtime(start, Duration::from_secs(2));
    c.finish(format!("{n} samples on [0.5, 100], {:.2?}", start.elapsed()))
}

fn truncated_suite() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let cfg = load("truncated_schwarzschild.cfg")?;
    let items = run_sweep(&cfg, "r0", &[0.75, 1.0, 1.5], 0).map_err(|e| e.to_string())?;
    for item in &items {
        let r0 = item.value;
        let b = match &item.result {
            Ok(b) => b,
            Err(e) => return Err(format!("r0 = {r0}: {e}")),
        };
        c.abs(&format!("r0={r0}: C"), b.capacity.c, r0 + 0.5, 1e-9);
        c.check(b.hypothesis.alpha_interval.is_none(), || format!("r0={r0}: α feasible"));
        let i = &b.inequalities;
        let asserted = [
            ("central term", i.central_term_assertion.asserted),
            ("bray", i.bray.asserted),
            ("area-capacity", i.area_capacity.asserted),
            ("level-set area", i.levelset_area_asserted),
        ];
        for (name, a) in asserted {
            c.check(!a, || format!("r0={r0}: {name} asserted although α is infeasible"));
        }
        c.check(!b.verdict.theorem_violation, || format!("r0={r0}: violations {:?}", b.verdict.violations));
        if r0 == 1.0 {
            c.abs("r0=1: central term", i.mass_capacity.central_term, 7.0 / 12.0, 1e-8);
            c.abs("r0=1: B", b.ab.b, -5.0 * PI, 1e-8);
            c.abs("r0=1: A", b.ab.a, -7.0 * PI / 3.0, 1e-8);
            c.abs("r0=1: bray margin", i.bray.value, -0.5, 1e-8);
            c.abs("r0=1: area-capacity margin", i.area_capacity.value, -0.375, 1e-8);
        }
    }
    c.runtime(start, Duration::from_secs(3));
    c.finish(format!("r0 ∈ {{0.75, 1, 1.5}}, {:.2?}", start.elapsed()))
}

/// `φ = 1 + c1/r + c2/r²` with `r0` beyond the zeros of `φ` and of `f′`.
fn random_family(rng: &mut ChaCha8Rng) -> (f64, f64, f64) {
    let c1: f64 = rng.random_range(0.1..=2.0);
    let c2: f64 = rng.random_range(-1.0..=0.0);
    let phi_root = 0.5 * (-c1 + (c1 * c1 - 4.0 * c2).sqrt());
    let disc = c1 * c1 + 12.0 * c2;
    let df_root = if disc >= 0.0 { 0.5 * (c1 + disc.sqrt()) } else { 0.0 };
    let factor: f64 = rng.random_range(1.1..=2.0);
    (c1, c2, factor * phi_root.max(df_root))
}

fn monotonicity_gate() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f00d);
    let (mut worst_id, mut worst_div): (f64, f64) = (0.0, 0.0);
    let mut audited = 0;
    for k in 0..50 {
        let (c1, c2, r0) = random_family(&mut rng);
        let text = format!(
            "[metric]\nkind = conformal_radial\nphi = \"1 + c1/r + c2/r^2\"\nr0 = {r0:e}\n\
             [params]\nc1 = {c1:e}\nc2 = {c2:e}\n[declared]\nh2_trivial = true\n"
        );
        let cfg = ExperimentConfig::parse(&text).map_err(|e| format!("family {k}: {e}"))?;
        let b = run_audit(&cfg).map_err(|e| format!("family {k} (c1={c1}, c2={c2}, r0={r0}): {e}"))?;
        let tag = format!("family {k} (c1={c1:.4}, c2={c2:.4}, r0={r0:.4})");
        c.check(b.diagnostics.nonnegative_r.ok, || format!("{tag}: fails R ≥ 0"));
        if !b.diagnostics.nonnegative_r.ok {
            continue;
        }
        audited += 1;
        let mono = &b.monotonicity;
        c.check(mono.f_violations.is_empty(), || format!("{tag}: {} F violations", mono.f_violations.len()));
        c.check(mono.sup_f <= mono.f_limit_bound + 1e-6, || {
            format!("{tag}: sup F = {:.6e} > 8π(m − C) + 1e-6 = {:.6e}", mono.sup_f, mono.f_limit_bound + 1e-6)
        });
        worst_id = worst_id.max(b.identity.max_relative_defect);
        c.check(b.identity.max_relative_defect <= 1e-10, || {
            format!("{tag}: F = (4t³/C²)G′ defect {:.3e}", b.identity.max_relative_defect)
        });
        let Metric::Conformal(m) = cfg.metric.build().map_err(|e| e.to_string())? else {
            return Err(format!("{tag}: not conformal"));
        };
        let pot = RadialPotential::solve(&m.to_warped().map_err(|e| e.to_string())?, cfg.solver.tol)
            .map_err(|e| format!("{tag}: {e}"))?;
        let cap = pot.c;
        let defect = div_x_consistency(&pot, 0.5 * cap * (1.0 + 1e-9), 10.0 * cap).map_err(|e| format!("{tag}: {e}"))?;
        worst_div = worst_div.max(defect);
        c.check(defect < 1e-7, || format!("{tag}: divX defect {defect:.3e}"));
    }
    c.check(audited == 50, || format!("{audited} of 50 families passed R ≥ 0"));
    c.runtime(start, Duration::from_secs(30));
    c.finish(format!(
        "{audited} families, max identity defect {worst_id:.1e}, max divX defect {worst_div:.1e}, {:.2?}",
        start.elapsed()
    ))
}

fn grid_validation() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let cfg = load("schwarzschild_grid.cfg")?;
    c.check(cfg.solver.half_width == 16.0 && cfg.solver.h == 0.125, || "config is not L = 16, h = 1/8".into());
    let v = run_grid_validate(&cfg).map_err(|e| e.to_string())?;
    let coarse = &v.runs[0];
    c.check(coarse.capacity_error <= 0.03, || format!("capacity error {:.3e} > 3%", coarse.capacity_error));
    // Boundary-adjacent level set: t = 3C/4, two cells from ∂M at h = 1/8.
    let near = &coarse.levels[0];
    c.check((near.t - 0.75 * v.c_exact).abs() < 1e-12, || format!("first level at t = {}", near.t));
    c.check(near.area_error <= 0.05, || format!("area error {:.3e} > 5%", near.area_error));
    c.check(near.i2_error <= 0.05, || format!("I2 error {:.3e} > 5%", near.i2_error));
    let tag = format!("t = {:.4}C", 0.75);
    for q in ["C".to_string(), format!("area({tag})"), format!("I2({tag})")] {
        match v.orders.iter().find(|o| o.quantity == q) {
            Some(o) => c.check(o.order >= 0.8 && o.fine_error < o.coarse_error, || {
                format!("{q}: {:.3e} → {:.3e}, order {:.3}", o.coarse_error, o.fine_error, o.order)
            }),
            None => c.check(false, || format!("no observed order for {q}")),
        }
    }
    for run in &v.runs {
        for l in &run.levels {
            c.check(l.components == 1, || format!("h = {}: level t = {:.4} has {} components", run.h, l.t, l.components));
        }
    }
    c.check(v.converged, || format!("flagged unconverged: {:?}", v.unconverged));
    c.runtime(start, Duration::from_secs(120));
    c.finish(format!(
        "C err {:.2e} → {:.2e}, area(3C/4) {:.2e} → {:.2e}, I2(3C/4) {:.2e} → {:.2e}, {:.1?}",
        v.runs[0].capacity_error,
        v.runs[1].capacity_error,
        v.runs[0].levels[0].area_error,
        v.runs[1].levels[0].area_error,
        v.runs[0].levels[0].i2_error,
        v.runs[1].levels[0].i2_error,
        start.elapsed()
    ))
}

fn theorem_gate() -> Outcome {
    let start = Instant::now();
    let mut c = Checks::default();
    let mut names: Vec<PathBuf> = std::fs::read_dir(configs_dir())
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    names.sort();
    let (mut gated, mut asserted_margins) = (0, 0);
    for path in &names {
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let b = audit(&name)?;
        let h = &b.hypothesis;
        c.check(!b.verdict.theorem_violation, || format!("{name}: {:?}", b.verdict.violations));
        if !(h.h2_trivial && h.alpha_interval.is_some() && h.nonnegative_r) {
            continue;
        }
        gated += 1;
        let i = &b.inequalities;
        let cap = b.capacity.c;
        let margins = [
            ("mass-capacity", i.mass_capacity_assertion.asserted, i.mass_capacity.margin * cap),
            ("central term ≥ 1", i.central_term_assertion.asserted, i.central_term_assertion.value),
            ("m_ADM ≥ C", i.bray.asserted, i.bray.value),
            ("√(area/16π) ≥ C", i.area_capacity.asserted, i.area_capacity.value),
            ("level-set area", i.levelset_area_asserted, i.levelset_area_min_relative * cap),
        ];
        for (what, asserted, value) in margins {
            if asserted {
                asserted_margins += 1;
                c.check(value >= -1e-8 * cap, || format!("{name}: {what} margin {value:.6e} < −1e-8·C"));
            } else {
                c.check(b.verdict.margins_informational, || format!("{name}: {what} not asserted under an open gate"));
            }
        }
    }
    c.check(gated >= 3, || format!("only {gated} shipped configs pass the hypotheses"));
    c.finish(format!(
        "{} configs, {gated} gated, {asserted_margins} asserted margins, {:.2?}",
        names.len(),
        start.elapsed()
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 6] = [
        ("schwarzschild suite", schwarzschild_suite),
        ("flat-exterior suite", flat_suite),
        ("truncated-schwarzschild suite", truncated_suite),
        ("monotonicity gate", monotonicity_gate),
        ("grid-mode validation", grid_validation),
        ("theorem self-test gate", theorem_gate),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(msg) => println!("PASS  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
