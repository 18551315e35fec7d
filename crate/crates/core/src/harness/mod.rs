//! Experiment orchestration: configuration, training, evaluation, reports
//! and the command line.

pub mod checks;
pub mod cli;
pub mod config;
pub mod ops;
pub mod pipeline;
pub mod report;

pub use config::ExperimentConfig;
