//! Experiment harness: configuration, checkpoints, the staged pipeline
//! runner, artifact writers, and the command-line interface.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod experiment;
pub mod report;
