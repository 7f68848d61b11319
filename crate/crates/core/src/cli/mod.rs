//! Command implementations behind the `arflow` binary. Every command reads
//! a [`RunConfig`], writes its artifacts atomically under the run's output
//! directory and maps failures to exit codes via [`exit_code`].

mod args;
mod commands;
pub mod config;
pub mod eval;
pub mod pgm;

pub use args::{exit_code, main_with_args, run, Cli, Command};
pub use commands::*;
pub use config::{DataKind, DataSpec, Overrides, RunConfig};
