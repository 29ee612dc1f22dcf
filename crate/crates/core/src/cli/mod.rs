//! Batch front end: JSON experiment configs, deterministic runs, and JSON or
//! CSV reports.
//!
//! Randomized suites derive the seed of trial `t` as
//! `splitmix64(master ^ splitmix64(t))`, so results do not depend on the
//! number of workers.

mod config;
mod report;
mod run;

pub use config::{parse_config, parse_config_str, ChannelSpec, ConfigError, ExperimentConfig, Format, Kind, ObservableSpec, ProtocolSource};
pub use report::{emit_report, RunReport, Summary};
pub use run::{run_experiment, trial_seed, RunError};

/// Process exit codes.
pub mod exit {
    pub const ALL_HOLD: i32 = 0;
    pub const CONFIG: i32 = 1;
    pub const RELATION_FAILED: i32 = 2;
    pub const IO: i32 = 3;
}
