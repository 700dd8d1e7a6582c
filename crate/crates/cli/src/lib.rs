//! Command-line driver for capacitary-potential audits: configuration
//! parsing, the solve → sample → audit pipeline, sweeps, grid
//! convergence studies and versioned JSON/CSV reports.

pub mod app;
pub mod config;
pub mod pipeline;
pub mod report;

pub use config::{ConfigError, ExperimentConfig};
pub use pipeline::{run_audit, run_grid_validate, run_sweep, AuditBody, GridValidation, RunError, SweepItem};
pub use report::Envelope;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// Output could not be written.
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    /// An asserted theorem margin or monotonicity claim failed.
    pub const THEOREM_VIOLATION: i32 = 3;
    /// Solver failure, or a grid study that did not converge.
    pub const SOLVER: i32 = 4;
}
