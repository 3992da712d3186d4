//! File formats, configuration and subcommands for the `tacifa` binary. The
//! statistics live in `tacifa-core`.

pub mod commands;
pub mod config;
pub mod io;

pub use commands::{Dataset, FitOutcome};
pub use config::RunConfig;
