//! Benchmark runner behind the `rpinn` binary: config loading, solving with
//! the reduced, classical or BDF method, and CSV/TOML output.

pub mod compare;
pub mod config;
pub mod run;

use thiserror::Error;

pub use config::{Method, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown problem '{0}'")]
    UnknownProblem(String),
    #[error("{0}")]
    Argument(String),
    #[error("malformed config: {0}")]
    Config(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error("solver diverged: {0}")]
    Diverged(String),
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::UnknownProblem(_) | CliError::Argument(_) => 2,
            CliError::Config(_) => 3,
            CliError::Output(_) => 4,
            CliError::Diverged(_) => 5,
        }
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Max absolute and root-mean-square difference.
pub fn error_norms(pred: &[f64], reference: &[f64]) -> (f64, f64) {
    if pred.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut max = 0.0f64;
    let mut sq = 0.0;
    for (p, r) in pred.iter().zip(reference) {
        let d = (p - r).abs();
        max = if d.is_nan() { d } else { max.max(d) };
        sq += d * d;
    }
    (max, (sq / pred.len() as f64).sqrt())
}
