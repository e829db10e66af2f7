//! Command-line front end for rasterflow: configuration files, a
//! multi-rank runner, the scaling benchmark and small file utilities.

pub mod bench;
pub mod build;
pub mod config;
pub mod diff;
pub mod gen;
pub mod launch;

pub use config::{load_config, parse_config, ConfigError, PipelineConfig};
pub use launch::{run, RunOptions, RunOutcome, Transport};
