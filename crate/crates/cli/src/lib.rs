//! Command-line front end for the `chdbc` solver: TOML run configurations,
//! field files, CSV/JSON outputs and the subcommand drivers.

pub mod commands;
pub mod config;
pub mod io;

pub use commands::{exit_code, Status};
pub use config::RunConfig;
