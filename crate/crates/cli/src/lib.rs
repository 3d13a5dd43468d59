//! Config-driven commands behind the `balsurr` binary: dataset synthesis,
//! training sweeps, verification suites and report tables.

pub mod config;
pub mod report;
pub mod synth;
pub mod train;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("violation: {0}")]
    Violation(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Violation(_) => 3,
            CliError::Runtime(_) => 4,
        }
    }
}

impl From<balsurr::Error> for CliError {
    fn from(e: balsurr::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Mixes a tag into a base seed so derived streams differ.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    base ^ tag.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Sample mean and standard deviation (zero for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}
