use thiserror::Error;

use crate::expr::EvalError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid metric: {0}")]
    Metric(String),
    #[error("quadrature did not converge on [{a}, {b}]: estimate {value}, error {error}")]
    Quadrature { a: f64, b: f64, value: f64, error: f64 },
    #[error("parabolic end: the capacity integral diverges ({0})")]
    ParabolicEnd(String),
    #[error("extrapolation diverged: {0}")]
    Extrapolation(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("empty isosurface at level {0}")]
    EmptyIsosurface(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
