//! Library surface of the experiment runner: config loading, presets,
//! orchestration, and result rendering. The binary in `main.rs` is a thin
//! argument-parsing wrapper over these pieces.

pub mod config;
pub mod output;
pub mod runner;
