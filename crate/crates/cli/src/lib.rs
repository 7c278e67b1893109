//! Config-driven front end for the verification toolkit: parses a run
//! configuration, dispatches the command and writes a reproducible report.

pub mod config;
pub mod error;
pub mod run;

pub use config::{Command, RunConfig};
pub use error::{CliError, ConfigError};
pub use run::{exit_code, run_config, run_file, Overrides, RunReport, EXIT_ERROR, EXIT_FAIL, EXIT_PASS};
