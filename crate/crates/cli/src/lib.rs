//! Library behind the `uwbfuse` binary: configuration files, experiment
//! orchestration, and report statistics.

pub mod config;
pub mod experiment;
pub mod report;
pub mod stats;
