//! Files, configuration, the slide pipeline and the `densescan` command line
//! on top of `densescan-core`.

pub mod cli;
pub mod cohort;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod hash;
pub mod manifest;
pub mod pipeline;

pub use error::{CliError, CliResult};
