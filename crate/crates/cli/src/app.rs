//! Subcommands and their exit codes.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_formats, parse_values, ExperimentConfig, Format};
use crate::exit;
use crate::pipeline::{run_audit, run_grid_validate, run_sweep, RunError};
use crate::report::{default_out_dir, item_status, sweep_row, Envelope, SweepBody, Writer};

#[derive(Debug, Parser)]
#[command(name = "capmono", version, about = "Audit capacity, mass and level-set monotonicity on asymptotically flat metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output directory (default: the config's report.out, else ./reports)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated output formats: json, csv
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve, sample and audit one configuration
    Audit {
        config: PathBuf,
        #[command(flatten)]
        output: Output,
    },
    /// Audit a configuration over a list of parameter values
    Sweep {
        config: PathBuf,
        /// Metric parameter (or r0) to vary
        #[arg(long)]
        param: String,
        /// Comma-separated values
        #[arg(long, allow_hyphen_values = true)]
        values: String,
        /// Concurrent items (default: the config's report.workers; 0 = all cores)
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Lattice convergence study at h and h/2 against the radial solve
    GridValidate {
        config: PathBuf,
        #[command(flatten)]
        output: Output,
    },
}

fn fail(code: i32, msg: impl std::fmt::Display) -> i32 {
    eprintln!("capmono: {msg}");
    code
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, i32> {
    ExperimentConfig::load(path).map_err(|e| fail(exit::CONFIG, format!("{}: {e}", path.display())))
}

fn writer(cfg: &ExperimentConfig, output: &Output) -> Result<Writer, i32> {
    let formats: Vec<Format> = match &output.format {
        Some(f) => parse_formats(f).map_err(|e| fail(exit::CONFIG, format!("--format: {e}")))?,
        None => cfg.report.formats.clone(),
    };
    let dir = output.out.clone().unwrap_or_else(|| default_out_dir(cfg.report.out.as_deref()));
    Ok(Writer { dir, formats })
}

fn elapsed_ms(start: Instant) -> u64 {
    start.elapsed().as_millis() as u64
}

fn report_paths(paths: std::io::Result<Vec<PathBuf>>) -> Result<(), i32> {
    match paths {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Err(e) => Err(fail(exit::IO, format!("cannot write report: {e}"))),
    }
}

fn run_error(e: RunError) -> i32 {
    fail(e.exit_code(), e)
}

pub fn execute(cli: Cli) -> i32 {
    match run(cli) {
        Ok(code) | Err(code) => code,
    }
}

fn run(cli: Cli) -> Result<i32, i32> {
    match cli.command {
        Command::Audit { config, output } => {
            let start = Instant::now();
            let cfg = load(&config)?;
            let w = writer(&cfg, &output)?;
            let body = run_audit(&cfg).map_err(run_error)?;
            let env = Envelope::new("audit", &body, elapsed_ms(start));
            report_paths(w.audit(&cfg.report.name, &body, &env))?;
            let v = &body.verdict;
            println!(
                "C = {:.12}  m_ADM = {:.12}  rigidity: {}  second gate: {}",
                body.capacity.c,
                body.adm_mass.value,
                if body.rigidity.schwarzschild_like { "schwarzschild-like" } else { "non-rigid" },
                if body.inequalities.second_gate.open { "open" } else { "closed" },
            );
            if v.theorem_violation {
                for msg in &v.violations {
                    eprintln!("capmono: theorem violation: {msg}");
                }
                return Ok(exit::THEOREM_VIOLATION);
            }
            Ok(exit::OK)
        }
        Command::Sweep { config, param, values, workers, output } => {
            let start = Instant::now();
            let cfg = load(&config)?;
            let w = writer(&cfg, &output)?;
            let values = parse_values(&values).map_err(|e| fail(exit::CONFIG, format!("--values: {e}")))?;
            let items = run_sweep(&cfg, &param, &values, workers.unwrap_or(cfg.report.workers)).map_err(run_error)?;
            let envs: Vec<Option<Envelope>> =
                items.iter().map(|i| i.result.as_ref().ok().map(|b| Envelope::new("audit", b, 0))).collect();
            let body = SweepBody {
                param: param.clone(),
                values: values.clone(),
                rows: items.iter().map(sweep_row).collect(),
                item_sha256: envs.iter().map(|e| e.as_ref().map(|e| e.body_sha256.clone())).collect(),
            };
            let env = Envelope::new("sweep", &body, elapsed_ms(start));
            report_paths(w.sweep(&cfg.report.name, &param, &items, &envs, &env))?;
            // The most severe item decides the exit code.
            let mut code = exit::OK;
            for item in &items {
                let status = item_status(item);
                match &item.result {
                    Ok(b) => println!("{param} = {}: {status}  C = {:.12}", item.value, b.capacity.c),
                    Err(e) => println!("{param} = {}: {status}  {e}", item.value),
                }
                code = code.max(match &item.result {
                    Ok(b) if b.verdict.theorem_violation => exit::THEOREM_VIOLATION,
                    Ok(_) => exit::OK,
                    Err(e) => e.exit_code(),
                });
            }
            Ok(code)
        }
        Command::GridValidate { config, output } => {
            let start = Instant::now();
            let cfg = load(&config)?;
            let w = writer(&cfg, &output)?;
            let v = run_grid_validate(&cfg).map_err(run_error)?;
            let env = Envelope::new("grid_validate", &v, elapsed_ms(start));
            report_paths(w.grid_validation(&cfg.report.name, &v, &env))?;
            for w in &v.warnings {
                eprintln!("capmono: warning: {w}");
            }
            for o in &v.orders {
                println!("{:<24} {:.3e} -> {:.3e}  order {:.2}", o.quantity, o.coarse_error, o.fine_error, o.order);
            }
            if !v.converged {
                for msg in &v.unconverged {
                    eprintln!("capmono: unconverged: {msg}");
                }
                return Ok(exit::SOLVER);
            }
            Ok(exit::OK)
        }
    }
}
