//! Std companion of `freshchain-core`: TOML configuration, experiment harness,
//! CSV output, checkpoints and threaded workers.

pub mod config;
pub mod harness;
pub mod parallel;
