//! Command-line pipeline: asset/data generation, simulation, training,
//! evaluation and benchmarking for event-camera two-hand pose
//! estimation.
//!
//! The binary exposes six subcommands — `gen-assets`, `gen-data`,
//! `simulate`, `train`, `eval`, `bench` — all driven by one validated
//! JSON configuration. Exit codes: `0` success, `2` invalid
//! configuration or input, `3` numeric abort during training, `1`
//! anything else.

pub mod assets;
pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod container;
pub mod dataset;
pub mod frames;
pub mod exit;

/// Entry point used by the `evpose` binary; returns the process exit code.
pub fn run() -> i32 {
    cli::run_from_args(std::env::args_os())
}
