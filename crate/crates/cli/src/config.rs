//! Experiment configuration: sectioned `key = value` text.
//!
//! ```ini
//! [metric]
//! kind = conformal_radial
//! phi = "1 + m/(2*r)"
//! r0 = 0.5
//!
//! [params]
//! m = 1
//!
//! [declared]
//! h2_trivial = true
//! ```
//!
//! Every section other than `[metric]` is optional; the full grammar and
//! defaults are listed in the README. Unknown sections and keys are
//! rejected so that typos do not silently fall back to defaults.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use capmono_core::functionals::DEFAULT_T_POINTS;
use capmono_core::inequalities::ASSERT_TOL;
use capmono_core::metrics::{ConformalMetric, Metric, RadialMetric};
use capmono_core::potential::grid::GridOptions;
use capmono_core::potential::radial::MIN_TOL;
use ini::{Ini, ParseOption};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("{key}: {message}")]
    Key { key: String, message: String },
}

impl ConfigError {
    fn key(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Key { key: key.into(), message: message.into() }
    }

    /// Key path the error refers to, if any.
    pub fn key_path(&self) -> Option<&str> {
        match self {
            ConfigError::Key { key, .. } => Some(key),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// `(1 + m/2r)⁴δ` with parameter `m`; `r0` defaults to the horizon `m/2`.
    Schwarzschild,
    /// Euclidean exterior of the ball of radius `r0`.
    Flat,
    /// `φ(r)⁴δ`, expression `phi` in `r`.
    ConformalRadial,
    /// `φ(x, y, z)⁴δ`, expression `phi` in `x, y, z`.
    ConformalSpatial,
    /// `a(r)dr² + f(r)²g_S²`, expressions `a` and `f` in `r`.
    Warped,
}

impl MetricKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "schwarzschild" => MetricKind::Schwarzschild,
            "flat" => MetricKind::Flat,
            "conformal_radial" => MetricKind::ConformalRadial,
            "conformal_spatial" => MetricKind::ConformalSpatial,
            "warped" => MetricKind::Warped,
            _ => return None,
        })
    }

    fn expressions(self) -> &'static [&'static str] {
        match self {
            MetricKind::Schwarzschild | MetricKind::Flat => &[],
            MetricKind::ConformalRadial | MetricKind::ConformalSpatial => &["phi"],
            MetricKind::Warped => &["a", "f"],
        }
    }

    pub fn is_conformal(self) -> bool {
        !matches!(self, MetricKind::Warped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSpec {
    pub kind: MetricKind,
    pub exprs: BTreeMap<String, String>,
    pub params: BTreeMap<String, f64>,
    /// `None` only for Schwarzschild, meaning the horizon.
    pub r0: Option<f64>,
}

impl MetricSpec {
    /// Builds the metric. Errors are reported against config keys.
    pub fn build(&self) -> Result<Metric, ConfigError> {
        let params: HashMap<String, f64> = self.params.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let expr = |name: &str| self.exprs[name].as_str();
        let r0 = || self.r0.ok_or_else(|| ConfigError::key("metric.r0", "missing"));
        let built = match self.kind {
            MetricKind::Schwarzschild => {
                let m = *self.params.get("m").ok_or_else(|| ConfigError::key("params.m", "missing"))?;
                if !(m > 0.0) {
                    return Err(ConfigError::key("params.m", format!("must be positive, got {m}")));
                }
                if self.params.len() > 1 {
                    let extra = self.params.keys().find(|k| *k != "m").cloned().unwrap_or_default();
                    return Err(ConfigError::key(format!("params.{extra}"), "not a parameter of the schwarzschild kind"));
                }
                match self.r0 {
                    None => ConformalMetric::schwarzschild(m).map(Metric::Conformal),
                    Some(r0) => ConformalMetric::schwarzschild_truncated(m, r0).map(Metric::Conformal),
                }
            }
            MetricKind::Flat => RadialMetric::flat(r0()?).map(Metric::Warped),
            MetricKind::ConformalRadial => ConformalMetric::parse_radial(expr("phi"), &params, r0()?).map(Metric::Conformal),
            MetricKind::ConformalSpatial => {
                ConformalMetric::parse_spatial(expr("phi"), &params, r0()?).map(Metric::Conformal)
            }
            MetricKind::Warped => RadialMetric::parse(expr("a"), expr("f"), &params, r0()?).map(Metric::Warped),
        };
        built.map_err(|e| {
            let key = match self.kind {
                MetricKind::ConformalRadial | MetricKind::ConformalSpatial => "metric.phi",
                MetricKind::Warped => "metric",
                _ => "metric.r0",
            };
            ConfigError::key(key, e.to_string())
        })
    }

    /// Conformally flat view for the lattice solver; the flat exterior is
    /// `φ = 1`.
    pub fn conformal(&self) -> Result<ConformalMetric, ConfigError> {
        match self.build()? {
            Metric::Conformal(c) => Ok(c),
            Metric::Warped(_) if self.kind == MetricKind::Flat => {
                let r0 = self.r0.ok_or_else(|| ConfigError::key("metric.r0", "missing"))?;
                ConformalMetric::parse_radial("1", &HashMap::new(), r0).map_err(|e| ConfigError::key("metric.r0", e.to_string()))
            }
            Metric::Warped(_) => Err(ConfigError::key("metric.kind", "not conformally flat")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Radial,
    Grid3d,
}

/// ADM mass fed to the lattice outer data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum OuterMass {
    /// The computed ADM mass.
    Adm,
    /// First-order data only.
    None,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverSpec {
    pub mode: Mode,
    /// Radial quadrature tolerance.
    pub tol: f64,
    pub half_width: f64,
    pub h: f64,
    pub cg_tol: f64,
    pub first_pass_tol: f64,
    pub max_iterations: usize,
    pub outer_mass: OuterMass,
    /// Polar nodes of the boundary sphere rule in grid mode.
    pub boundary_nodes: usize,
}

impl SolverSpec {
    pub fn grid_options(&self, m_adm: f64) -> GridOptions {
        GridOptions {
            half_width: self.half_width,
            h: self.h,
            tol: self.cg_tol,
            first_pass_tol: self.first_pass_tol,
            max_iterations: self.max_iterations,
            outer_mass: match self.outer_mass {
                OuterMass::Adm => Some(m_adm),
                OuterMass::None => None,
                OuterMass::Value(m) => Some(m),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSpec {
    /// Log-spaced samples after the boundary (radial mode).
    pub t_points: usize,
    /// Level sets sampled in grid mode.
    pub grid_levels: usize,
    /// Upper end of the grid-mode levels as a fraction of the smallest
    /// outer-boundary value of `u`.
    pub grid_level_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditSpec {
    /// Relative pairwise tolerance of the radial monotonicity audit.
    pub monotonicity_tol: f64,
    /// Slack of `sup F ≤ 8π(m − C)` and `G ≤ 0`.
    pub bound_tol: f64,
    pub rigidity_tol: f64,
    /// Relative slack of the level-set area bound.
    pub level_area_tol: f64,
    /// Multiple of the estimated discretization error used as the grid
    /// monotonicity tolerance.
    pub grid_tol_factor: f64,
    pub use_weak_condition: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSpec {
    pub name: String,
    pub out: Option<String>,
    pub formats: Vec<Format>,
    /// Sweep worker budget; 0 uses every core.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub metric: MetricSpec,
    pub solver: SolverSpec,
    pub sweep: SweepSpec,
    pub audit: AuditSpec,
    pub report: ReportSpec,
    /// Declared `H₂(M, ∂M; ℤ) = 0`.
    pub h2_trivial: bool,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("metric", &["kind", "phi", "a", "f", "r0"]),
    ("params", &[]),
    ("declared", &["h2_trivial"]),
    ("solver", &["mode", "tol", "half_width", "h", "cg_tol", "first_pass_tol", "max_iterations", "outer_mass", "boundary_nodes"]),
    ("sweep", &["t_points", "grid_levels", "grid_level_fraction"]),
    ("audit", &["monotonicity_tol", "bound_tol", "rigidity_tol", "level_area_tol", "grid_tol_factor", "use_weak_condition"]),
    ("report", &["name", "out", "formats", "workers"]),
];

/// Values of one section, consumed key by key.
struct Section<'a> {
    name: &'a str,
    values: BTreeMap<String, String>,
}

impl Section<'_> {
    fn path(&self, key: &str) -> String {
        format!("{}.{key}", self.name)
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn f64_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => parse_f64(v).ok_or_else(|| ConfigError::key(self.path(key), format!("not a number: {v:?}"))),
        }
    }

    fn positive_or(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        let v = self.f64_or(key, default)?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(ConfigError::key(self.path(key), format!("must be positive, got {v}")))
        }
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError::key(self.path(key), format!("not a nonnegative integer: {v:?}"))),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.str(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(ConfigError::key(self.path(key), format!("expected true or false, got {v:?}"))),
        }
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        let mut cfg = Self::parse(&text)?;
        if cfg.report.name.is_empty() {
            cfg.report.name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report").to_string();
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let opt = ParseOption { enabled_quote: true, enabled_escape: false, ..Default::default() };
        let ini = Ini::load_from_str_opt(text, opt).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        let mut sections: BTreeMap<&str, Section> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(ConfigError::key(k, "keys must belong to a section"));
                }
                continue;
            };
            let Some(&(sname, keys)) = SECTIONS.iter().find(|(s, _)| *s == name) else {
                return Err(ConfigError::key(name, "unknown section"));
            };
            let section = sections.entry(sname).or_insert_with(|| Section { name: sname, values: BTreeMap::new() });
            for (k, v) in props.iter() {
                if sname != "params" && !keys.contains(&k) {
                    return Err(ConfigError::key(section.path(k), "unknown key"));
                }
                if section.values.insert(k.to_string(), v.trim().to_string()).is_some() {
                    return Err(ConfigError::key(section.path(k), "duplicate key"));
                }
            }
        }
        let empty = |name| Section { name, values: BTreeMap::new() };
        let metric = sections.remove("metric").ok_or_else(|| ConfigError::key("metric", "missing section"))?;
        let params = sections.remove("params").unwrap_or_else(|| empty("params"));
        let declared = sections.remove("declared").unwrap_or_else(|| empty("declared"));
        let solver = sections.remove("solver").unwrap_or_else(|| empty("solver"));
        let sweep = sections.remove("sweep").unwrap_or_else(|| empty("sweep"));
        let audit = sections.remove("audit").unwrap_or_else(|| empty("audit"));
        let report = sections.remove("report").unwrap_or_else(|| empty("report"));

        let kind_str = metric.str("kind").ok_or_else(|| ConfigError::key("metric.kind", "missing"))?;
        let kind = MetricKind::parse(kind_str)
            .ok_or_else(|| ConfigError::key("metric.kind", format!("unknown metric kind {kind_str:?}")))?;
        let mut exprs = BTreeMap::new();
        for key in ["phi", "a", "f"] {
            let wanted = kind.expressions().contains(&key);
            match (metric.str(key), wanted) {
                (Some(v), true) if !v.is_empty() => {
                    exprs.insert(key.to_string(), v.to_string());
                }
                (Some(_), true) => return Err(ConfigError::key(metric.path(key), "empty expression")),
                (None, true) => return Err(ConfigError::key(metric.path(key), "missing")),
                (Some(_), false) => {
                    return Err(ConfigError::key(metric.path(key), format!("not used by the {kind_str} kind")))
                }
                (None, false) => {}
            }
        }
        let r0 = match metric.str("r0") {
            None if kind == MetricKind::Schwarzschild => None,
            None => return Err(ConfigError::key("metric.r0", "missing")),
            Some(_) => Some(metric.positive_or("r0", 1.0)?),
        };
        let mut param_values = BTreeMap::new();
        for (k, v) in &params.values {
            let value = parse_f64(v).ok_or_else(|| ConfigError::key(params.path(k), format!("not a number: {v:?}")))?;
            param_values.insert(k.clone(), value);
        }
        let metric = MetricSpec { kind, exprs, params: param_values, r0 };

        let mode = match solver.str("mode").unwrap_or("radial") {
            "radial" => Mode::Radial,
            "grid3d" => Mode::Grid3d,
            other => return Err(ConfigError::key("solver.mode", format!("expected radial or grid3d, got {other:?}"))),
        };
        if mode == Mode::Grid3d && !kind.is_conformal() {
            return Err(ConfigError::key("solver.mode", "grid mode requires a conformally flat metric kind"));
        }
        if mode == Mode::Radial && kind == MetricKind::ConformalSpatial {
            return Err(ConfigError::key("solver.mode", "a spatial conformal factor needs grid3d mode"));
        }
        let defaults = GridOptions::new(16.0, 0.125);
        let outer_mass = match solver.str("outer_mass").unwrap_or("adm") {
            "adm" => OuterMass::Adm,
            "none" => OuterMass::None,
            v => OuterMass::Value(
                parse_f64(v).ok_or_else(|| ConfigError::key("solver.outer_mass", format!("expected adm, none or a number, got {v:?}")))?,
            ),
        };
        let tol = solver.positive_or("tol", MIN_TOL)?;
        if tol < MIN_TOL {
            return Err(ConfigError::key("solver.tol", format!("must be at least {MIN_TOL:e}")));
        }
        let solver = SolverSpec {
            mode,
            tol,
            half_width: solver.positive_or("half_width", defaults.half_width)?,
            h: solver.positive_or("h", defaults.h)?,
            cg_tol: solver.positive_or("cg_tol", defaults.tol)?,
            first_pass_tol: solver.positive_or("first_pass_tol", defaults.first_pass_tol)?,
            max_iterations: solver.usize_or("max_iterations", defaults.max_iterations)?,
            outer_mass,
            boundary_nodes: solver.usize_or("boundary_nodes", 24)?.max(2),
        };

        let t_points = sweep.usize_or("t_points", DEFAULT_T_POINTS)?;
        if t_points < 2 {
            return Err(ConfigError::key("sweep.t_points", "need at least 2 samples"));
        }
        let grid_levels = sweep.usize_or("grid_levels", 12)?;
        if grid_levels < 2 {
            return Err(ConfigError::key("sweep.grid_levels", "need at least 2 levels"));
        }
        let grid_level_fraction = sweep.positive_or("grid_level_fraction", 0.8)?;
        if grid_level_fraction >= 1.0 {
            return Err(ConfigError::key("sweep.grid_level_fraction", "must be below 1"));
        }
        let sweep = SweepSpec { t_points, grid_levels, grid_level_fraction };

        let audit = AuditSpec {
            monotonicity_tol: audit.positive_or("monotonicity_tol", 1e-8)?,
            bound_tol: audit.positive_or("bound_tol", 1e-6)?,
            rigidity_tol: audit.positive_or("rigidity_tol", ASSERT_TOL)?,
            level_area_tol: audit.positive_or("level_area_tol", ASSERT_TOL)?,
            grid_tol_factor: audit.positive_or("grid_tol_factor", 3.0)?,
            use_weak_condition: audit.bool_or("use_weak_condition", false)?,
        };

        let formats = match report.str("formats") {
            None => vec![Format::Json, Format::Csv],
            Some(v) => parse_formats(v).map_err(|m| ConfigError::key("report.formats", m))?,
        };
        let report = ReportSpec {
            name: report.str("name").unwrap_or("").to_string(),
            out: report.str("out").map(str::to_string),
            formats,
            workers: report.usize_or("workers", 0)?,
        };

        let h2_trivial = declared.bool_or("h2_trivial", false)?;
        let cfg = ExperimentConfig { metric, solver, sweep, audit, report, h2_trivial };
        cfg.metric.build()?;
        Ok(cfg)
    }

    /// Copy with one metric parameter (or `r0`) replaced.
    pub fn with_param(&self, param: &str, value: f64) -> Result<Self, ConfigError> {
        let mut cfg = self.clone();
        if param == "r0" {
            cfg.metric.r0 = Some(value);
        } else if let Some(v) = cfg.metric.params.get_mut(param) {
            *v = value;
        } else {
            return Err(ConfigError::key(format!("params.{param}"), "not a metric parameter; cannot sweep it"));
        }
        cfg.metric.build()?;
        Ok(cfg)
    }
}

/// Comma-separated list of `json` and `csv`.
pub fn parse_formats(s: &str) -> Result<Vec<Format>, String> {
    let mut out = Vec::new();
    for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let f = match item {
            "json" => Format::Json,
            "csv" => Format::Csv,
            other => return Err(format!("unknown format {other:?}")),
        };
        if !out.contains(&f) {
            out.push(f);
        }
    }
    if out.is_empty() {
        return Err("no formats given".into());
    }
    Ok(out)
}

/// Comma-separated list of numbers.
pub fn parse_values(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|v| parse_f64(v).ok_or_else(|| format!("not a number: {v:?}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHW: &str = "[metric]\nkind = schwarzschild\n[params]\nm = 1\n[declared]\nh2_trivial = true\n";

    #[test]
    fn minimal_schwarzschild() {
        let cfg = ExperimentConfig::parse(SCHW).unwrap();
        assert_eq!(cfg.metric.kind, MetricKind::Schwarzschild);
        assert_eq!(cfg.metric.r0, None);
        assert!(cfg.h2_trivial);
        assert_eq!(cfg.solver.mode, Mode::Radial);
        assert_eq!(cfg.sweep.t_points, DEFAULT_T_POINTS);
        assert_eq!(cfg.report.formats, vec![Format::Json, Format::Csv]);
        assert!((cfg.metric.build().unwrap().r0() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quoted_expressions() {
        let text = "[metric]\nkind = conformal_radial\nphi = \"1 + c1/r + c2/r^2\"\nr0 = 1\n[params]\nc1 = 1\nc2 = -0.1\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.metric.exprs["phi"], "1 + c1/r + c2/r^2");
        assert_eq!(cfg.metric.params["c2"], -0.1);
    }

    #[test]
    fn missing_r0_names_the_key() {
        let err = ExperimentConfig::parse("[metric]\nkind = flat\n").unwrap_err();
        assert_eq!(err.key_path(), Some("metric.r0"));
    }

    #[test]
    fn errors_carry_key_paths() {
        let cases = [
            ("[metric]\nkind = donut\nr0 = 1\n", "metric.kind"),
            ("[metric]\nkind = flat\nr0 = -1\n", "metric.r0"),
            ("[metric]\nkind = flat\nr0 = 1\nphi = \"1\"\n", "metric.phi"),
            ("[metric]\nkind = flat\nr0 = 1\n[solver]\ntoll = 1\n", "solver.toll"),
            ("[metric]\nkind = flat\nr0 = 1\n[solver]\nmode = grid\n", "solver.mode"),
            ("[metric]\nkind = warped\na = \"1\"\nf = \"r\"\nr0 = 1\n[solver]\nmode = grid3d\n", "solver.mode"),
            ("[metric]\nkind = conformal_radial\nphi = \"1 + q/r\"\nr0 = 1\n", "metric.phi"),
            ("[metric]\nkind = schwarzschild\n", "params.m"),
            ("[metric]\nkind = flat\nr0 = 1\n[report]\nformats = json,xml\n", "report.formats"),
            ("[metric]\nkind = flat\nr0 = 1\n[audit]\nuse_weak_condition = yes\n", "audit.use_weak_condition"),
            ("[metric]\nkind = flat\nr0 = 1\n[extra]\nx = 1\n", "extra"),
            ("[metric]\nkind = flat\nr0 = 1\n[params]\nm = one\n", "params.m"),
        ];
        for (text, key) in cases {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert_eq!(err.key_path(), Some(key), "{text}: {err}");
        }
    }

    #[test]
    fn sweep_parameter_substitution() {
        let cfg = ExperimentConfig::parse(SCHW).unwrap();
        let c = cfg.with_param("r0", 1.0).unwrap();
        assert_eq!(c.metric.r0, Some(1.0));
        let c = cfg.with_param("m", 2.0).unwrap();
        assert_eq!(c.metric.params["m"], 2.0);
        assert_eq!(cfg.with_param("q", 1.0).unwrap_err().key_path(), Some("params.q"));
        assert_eq!(cfg.with_param("m", -1.0).unwrap_err().key_path(), Some("params.m"));
    }

    #[test]
    fn lists() {
        assert_eq!(parse_formats("csv, json,csv").unwrap(), vec![Format::Csv, Format::Json]);
        assert!(parse_formats("").is_err());
        assert_eq!(parse_values("0.5, 1,1.5").unwrap(), vec![0.5, 1.0, 1.5]);
        assert!(parse_values("1,x").is_err());
        assert!(parse_values("").unwrap().is_empty());
    }
}
