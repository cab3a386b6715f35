//! Library side of the `locpomdp` command-line tool: configuration, the
//! `solve` / `rollout` / `check` commands and their on-disk artifacts.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod artifacts;
pub mod commands;
pub mod config;

pub use commands::{check, rollout, solve, Invocation};
pub use config::{RunConfig, SCHEMA_VERSION};

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "LOCPOMDP_OUT";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Unreadable or invalid configuration, or a missing solve report.
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("solver failed: {0}")]
    Solve(locpomdp::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Io(_) => 3,
            Self::Solve(_) => 1,
        }
    }
}
