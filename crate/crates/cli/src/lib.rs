//! Config handling and subcommand bodies of the `bfd` runner.

pub mod config;
pub mod runner;
