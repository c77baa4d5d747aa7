//! File formats and experiment plumbing around `pfm-core`: the binary
//! dash-dataset format, parameter checkpoints, metrics logs, and key=value
//! run configs. The `pfm-lab` binary wires these into subcommands.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod odcd;
