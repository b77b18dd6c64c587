//! Configuration-driven front end for the `lwr` command.

pub mod commands;
pub mod config;
pub mod output;
pub mod units;

pub use commands::{execute, exit_code, Subcommand};
pub use config::{load_config, parse_config, ConfigError, RunConfig};
