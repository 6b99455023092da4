//! Command-line front end: configuration, CSV/JSON artifacts and subcommands.

pub mod commands;
pub mod config;
pub mod io;
