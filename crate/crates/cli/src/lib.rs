//! Library half of the `kite` command-line tool.

pub mod args;
pub mod commands;
pub mod config;

pub use commands::{cmd_analyze, cmd_keyframes, cmd_narrate, cmd_simulate, AnalyzeInputs, CliError, QuestionType};
pub use config::{Overrides, RunConfig};
