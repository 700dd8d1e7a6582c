//! Versioned report envelopes and CSV exports.
//!
//! ```json
//! { "schema": "capmono.report", "schema_version": 1, "kind": "audit",
//!   "body": { ... }, "body_sha256": "…", "meta": { "runtime_ms": 12 } }
//! ```
//!
//! The body is deterministic and hashed as compact JSON with sorted keys.
//! `meta` holds everything that varies between runs and is not hashed.

use std::io::Write;
use std::path::{Path, PathBuf};

use capmono_core::functionals::MonotoneCurve;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::Format;
use crate::pipeline::{AuditBody, GridValidation, SweepItem};

pub const SCHEMA: &str = "capmono.report";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub runtime_ms: u64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub schema: String,
    pub schema_version: u32,
    /// `audit`, `grid_validate` or `sweep`.
    pub kind: String,
    pub body: Value,
    pub body_sha256: String,
    pub meta: Meta,
}

fn body_hash(body: &Value) -> String {
    let text = serde_json::to_string(body).expect("JSON values always serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl Envelope {
    pub fn new(kind: &str, body: &impl Serialize, runtime_ms: u64) -> Self {
        let body = serde_json::to_value(body).expect("report bodies serialize");
        Envelope {
            schema: SCHEMA.into(),
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            body_sha256: body_hash(&body),
            body,
            meta: Meta { runtime_ms, tool_version: env!("CARGO_PKG_VERSION").into() },
        }
    }

    /// Parses a report, checking the schema, version and body hash.
    pub fn parse(text: &str) -> Result<Self, String> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| format!("not a report: {e}"))?;
        if env.schema != SCHEMA {
            return Err(format!("schema {:?} is not {SCHEMA:?}", env.schema));
        }
        if env.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema version {}", env.schema_version));
        }
        if body_hash(&env.body) != env.body_sha256 {
            return Err("body hash mismatch".into());
        }
        Ok(env)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("JSON values always serialize");
        s.push('\n');
        s
    }
}

pub const CURVE_COLUMNS: [&str; 11] = ["t", "level", "area", "I2", "IH", "IH2", "F", "G", "Fprime", "Gprime", "regular"];

fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn write_curve_csv<W: Write>(curve: &MonotoneCurve, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CURVE_COLUMNS)?;
    for p in &curve.points {
        out.write_record([
            num(p.t),
            num(p.level),
            num(p.area),
            num(p.i2),
            num(p.ih),
            num(p.ih2),
            num(p.f),
            num(p.g),
            p.f_prime.map(num).unwrap_or_default(),
            num(p.g_prime),
            p.regular.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// One row of the sweep summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub status: String,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    #[serde(rename = "m_ADM")]
    pub m_adm: Option<f64>,
    pub mass_capacity_margin: Option<f64>,
    pub central_term: Option<f64>,
    pub bray_margin: Option<f64>,
    pub area_capacity_margin: Option<f64>,
    pub levelset_area_min_relative: Option<f64>,
    pub nonnegative_r: Option<bool>,
    pub alpha_feasible: Option<bool>,
    pub weak_condition: Option<bool>,
    pub second_gate_open: Option<bool>,
    pub theorem_violation: Option<bool>,
    pub error: Option<String>,
}

/// `ok`, `theorem_violation`, `config_error` or `solver_failure`.
pub fn item_status(item: &SweepItem) -> &'static str {
    match &item.result {
        Ok(b) if b.verdict.theorem_violation => "theorem_violation",
        Ok(_) => "ok",
        Err(e) if e.exit_code() == 2 => "config_error",
        Err(_) => "solver_failure",
    }
}

pub fn sweep_row(item: &SweepItem) -> SweepRow {
    let status = item_status(item).to_string();
    match &item.result {
        Ok(b) => SweepRow {
            value: item.value,
            status,
            c: Some(b.capacity.c),
            m_adm: Some(b.adm_mass.value),
            mass_capacity_margin: Some(b.inequalities.mass_capacity.margin),
            central_term: Some(b.inequalities.mass_capacity.central_term),
            bray_margin: Some(b.inequalities.bray.value),
            area_capacity_margin: Some(b.inequalities.area_capacity.value),
            levelset_area_min_relative: Some(b.inequalities.levelset_area_min_relative),
            nonnegative_r: Some(b.hypothesis.nonnegative_r),
            alpha_feasible: Some(b.hypothesis.alpha_interval.is_some()),
            weak_condition: Some(b.hypothesis.weak_condition),
            second_gate_open: Some(b.inequalities.second_gate.open),
            theorem_violation: Some(b.verdict.theorem_violation),
            error: None,
        },
        Err(e) => SweepRow {
            value: item.value,
            status,
            c: None,
            m_adm: None,
            mass_capacity_margin: None,
            central_term: None,
            bray_margin: None,
            area_capacity_margin: None,
            levelset_area_min_relative: None,
            nonnegative_r: None,
            alpha_feasible: None,
            weak_condition: None,
            second_gate_open: None,
            theorem_violation: None,
            error: Some(e.to_string()),
        },
    }
}

pub fn write_sweep_csv<W: Write>(items: &[SweepItem], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for item in items {
        out.serialize(sweep_row(item))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_orders_csv<W: Write>(v: &GridValidation, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for o in &v.orders {
        out.serialize(o)?;
    }
    out.flush()?;
    Ok(())
}

/// Sweep envelope: per-item report hashes and summary rows.
#[derive(Debug, Clone, Serialize)]
pub struct SweepBody {
    pub param: String,
    pub values: Vec<f64>,
    pub rows: Vec<SweepRow>,
    pub item_sha256: Vec<Option<String>>,
}

/// Writes the requested files; returns their paths.
pub struct Writer {
    pub dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Writer {
    fn create(&self, name: &str) -> std::io::Result<(PathBuf, std::fs::File)> {
        std::fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(name);
        let f = std::fs::File::create(&path)?;
        Ok((path, f))
    }

    fn json(&self, name: &str, env: &Envelope, paths: &mut Vec<PathBuf>) -> std::io::Result<()> {
        if self.formats.contains(&Format::Json) {
            let (path, mut f) = self.create(&format!("{name}.json"))?;
            f.write_all(env.to_json().as_bytes())?;
            paths.push(path);
        }
        Ok(())
    }

    fn csv(
        &self,
        name: &str,
        paths: &mut Vec<PathBuf>,
        write: impl FnOnce(std::fs::File) -> csv::Result<()>,
    ) -> std::io::Result<()> {
        if self.formats.contains(&Format::Csv) {
            let (path, f) = self.create(name)?;
            write(f).map_err(std::io::Error::other)?;
            paths.push(path);
        }
        Ok(())
    }

    pub fn audit(&self, name: &str, body: &AuditBody, env: &Envelope) -> std::io::Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        self.json(name, env, &mut paths)?;
        self.csv(&format!("{name}.curve.csv"), &mut paths, |f| write_curve_csv(&body.curve, f))?;
        Ok(paths)
    }

    pub fn grid_validation(&self, name: &str, v: &GridValidation, env: &Envelope) -> std::io::Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        self.json(&format!("{name}.grid"), env, &mut paths)?;
        self.csv(&format!("{name}.grid.csv"), &mut paths, |f| write_orders_csv(v, f))?;
        Ok(paths)
    }

    pub fn sweep(
        &self,
        name: &str,
        param: &str,
        items: &[SweepItem],
        envs: &[Option<Envelope>],
        env: &Envelope,
    ) -> std::io::Result<Vec<PathBuf>> {
        let mut paths = Vec::new();
        for (item, e) in items.iter().zip(envs) {
            if let (Ok(body), Some(e)) = (&item.result, e) {
                let stem = format!("{name}.{param}={}", item.value);
                self.json(&stem, e, &mut paths)?;
                self.csv(&format!("{stem}.curve.csv"), &mut paths, |f| write_curve_csv(&body.curve, f))?;
            }
        }
        self.json(&format!("{name}.sweep"), env, &mut paths)?;
        self.csv(&format!("{name}.sweep.csv"), &mut paths, |f| write_sweep_csv(items, f))?;
        Ok(paths)
    }
}

pub fn default_out_dir(configured: Option<&str>) -> PathBuf {
    Path::new(configured.unwrap_or("reports")).to_path_buf()
}
