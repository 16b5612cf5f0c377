//! Configuration, persistence and command implementations for the
//! `stochem` binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod snapshot;

pub use commands::{Experiment, Overrides, Status};
pub use config::{parse_config, ConfigError, RunConfig};
