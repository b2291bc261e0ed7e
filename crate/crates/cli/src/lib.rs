//! Reproducible experiment commands on top of the `pixalign` library. Each
//! command reads one TOML config and writes a self-describing output
//! directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod run_dir;

pub use error::{CliError, CliResult, ExitKind};
