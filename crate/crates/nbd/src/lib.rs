//! Scenario runner for nonlocal boundary diffusions: JSON configs, CSV and
//! manifest output, a rayon chunk executor for Monte Carlo, and the
//! invariant suite.

pub mod check;
pub mod commands;
pub mod config;
pub mod exec;
pub mod output;

pub use commands::{run, RunError, RunOutcome, Subcommand};
pub use config::{load, parse_with_overrides, Built, Config, ConfigError};
pub use exec::Rayon;
