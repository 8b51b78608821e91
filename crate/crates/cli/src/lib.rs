//! `ehrseq`: synthetic data, preprocessing, cohort construction, training,
//! evaluation and model comparison as separate subcommands sharing one
//! TOML run config.

pub mod args;
pub mod config;
pub mod error;
pub mod pipeline;

pub use args::{run, Cli};
pub use config::RunConfig;
pub use error::CliError;
