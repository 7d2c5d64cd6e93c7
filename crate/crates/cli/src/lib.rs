//! Pipeline orchestration for the `scene-align` command-line tool: the
//! configuration document, synthetic evaluation scenes and one function per
//! subcommand.

pub mod commands;
pub mod config;
pub mod error;
pub mod scenes;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
