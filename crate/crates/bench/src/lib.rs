//! Experiment harness for the SPAD-array link simulator: configuration,
//! frame-level link simulation, sweeps, rate searches and report files.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod link;
pub mod oracle;
pub mod report;
pub mod sweep;

pub use config::{ConfigError, ExperimentConfig, Modulation, Scenario};
pub use report::{emit_report, SweepResult};
pub use sweep::{run_scenario, Harness, SimError};
