//! Library surface of the command-line driver, so integration tests can
//! exercise config resolution, plotting and the commands directly.

pub mod commands;
pub mod config;
pub mod plot;

pub use commands::CliError;
pub use config::RunConfig;
