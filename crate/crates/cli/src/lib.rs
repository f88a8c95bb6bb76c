//! Library side of the `mcem` command-line tool: configuration parsing and
//! the subcommand implementations.

// NaN must fail validation, hence `!(x > 0.0)` rather than `x <= 0.0`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

pub use commands::{
    cmd_experiment, cmd_gen_data, cmd_plot_script, cmd_run, CliError, ExperimentKind,
};
pub use config::{parse_config, ConfigError, RunConfig, KEYS};
