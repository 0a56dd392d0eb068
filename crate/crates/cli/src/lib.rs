//! Config-driven experiment runner for `critfield`.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiments;
pub mod report;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind, Mode};
pub use experiments::run;
pub use report::{Check, ExperimentOutput, Report, Verdict};
