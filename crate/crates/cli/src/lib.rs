//! Library side of the `offload` command: scenario files, subcommand bodies
//! and staged output.

pub mod commands;
pub mod error;
pub mod output;
pub mod scenario;

pub use error::CliError;
pub use scenario::Scenario;
