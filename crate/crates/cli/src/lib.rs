//! Command-line front end for the SSPCAB auto-encoder library.
//!
//! A thin shell: every command resolves a [`config::RunConfig`] (config file
//! overridden by flags) and delegates to library calls, so each command's
//! behavior is reproducible by using `sspcab_core` directly with the same
//! configuration.

pub mod commands;
pub mod config;

use std::fmt;

/// Errors carrying the process exit contract: usage and configuration
/// problems exit with code 2, runtime failures with code 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Runtime(msg) => f.write_str(msg),
        }
    }
}

impl std::error::Error for CliError {}
