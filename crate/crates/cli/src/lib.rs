//! Batch driver for the `msnt` mixture solver: configuration files, scenario
//! presets, single runs and parameter sweeps.

pub mod config;
pub mod runner;

pub use config::{parse_config, ConfigError, Profile, RunConfig};
pub use runner::{run, sweep, RunFailure, RunOptions, RunSummary, SweepParam};
