//! Experiment harness: configuration, data ingestion, training loop,
//! persistence, experiment drivers and the CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod experiments;
pub mod optim;
pub mod train;
