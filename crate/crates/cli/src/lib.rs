//! Configuration, commands and reports behind the `miagrid` binary.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{cmd_attack, cmd_compare_hpo, cmd_eval, cmd_gc, cmd_grid, compare_arms, exit_code, open_store};
pub use config::ExperimentConfig;
