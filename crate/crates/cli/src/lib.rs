//! Configuration-driven front end for the gPAM Laplace laboratory.
//!
//! Each subcommand reads one TOML [`RunConfig`], writes its artifacts to an
//! output directory and records them in `<command>.manifest.json` together
//! with the SHA-256 of the canonical config.

pub mod commands;
pub mod config;

use std::fmt;

pub use commands::{run, run_verified, verify_dir, Command, FileDigest, RunManifest};
pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(gpam_core::Error),
    Io(String),
    Verify(String),
}

impl CliError {
    /// 2 config, 3 violated numerical hypothesis, 4 I/O, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 4,
            CliError::Verify(_) => 1,
            CliError::Core(e) if e.is_hypothesis_violation() => 3,
            CliError::Core(gpam_core::Error::Io(_)) => 4,
            CliError::Core(
                gpam_core::Error::Config(_)
                | gpam_core::Error::GridSize(_)
                | gpam_core::Error::MollifierTooWide { .. }
                | gpam_core::Error::BasisTooLarge { .. },
            ) => 2,
            CliError::Core(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Verify(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gpam_core::Error> for CliError {
    fn from(e: gpam_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
