//! Campaign driver for `sandpile-core`: TOML configuration, seeded trials on
//! a fixed worker pool, the four experiment commands and their CSV/JSON
//! outputs. The `sandpile` binary is a thin shell over [`commands`].

pub mod campaign;
pub mod commands;
pub mod config;
pub mod error;
pub mod fault;
pub mod output;
pub mod settle;
pub mod summary;
pub mod sweep;
pub mod tails;
pub mod verify;

pub use commands::{execute, Command};
pub use config::{ExperimentConfig, Overrides};
pub use error::LabError;
