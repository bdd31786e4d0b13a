//! Config files, scans and subcommand runners.

pub mod commands;
pub mod config;
pub mod scan;

pub use commands::{run, Command, CommandOutput, Overrides};
pub use config::{parse_config, ConfigFile, ExperimentConfig, UserSpec};
pub use scan::{region_scan, GridSpec, McValidation, ScanOptions, SweepRow, SweepTable};
