//! Harness behind the `semtlc` binary: training, evaluation, saliency
//! export, the three-way controller comparison and frame rendering. Every
//! command writes into its own output directory and, apart from wall-time
//! files, produces the same bytes for the same config and seed.

pub mod commands;
pub mod compare;
pub mod config;
pub mod manifest;

pub use commands::{cmd_eval, cmd_explain, cmd_render, cmd_train, ExplainOptions, ExplainedFrame};
pub use compare::{cmd_compare, ComparisonTable, Method};
pub use config::RunConfig;
pub use manifest::Manifest;
