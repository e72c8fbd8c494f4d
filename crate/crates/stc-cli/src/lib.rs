//! Library surface of the command-line front end, exposed so integration
//! and acceptance tests can drive the same code paths as the binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use config::ExperimentConfig;
pub use error::CliError;
