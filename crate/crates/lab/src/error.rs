use std::path::Path;

use thiserror::Error;

/// Process exit codes.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{0}")]
    Core(#[from] sandpile_core::Error),

    #[error("output encoding failed: {0}")]
    Encode(String),
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        LabError::Io { path: path.display().to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => EXIT_USAGE,
            LabError::Io { .. } | LabError::Encode(_) => EXIT_IO,
            // a core error mid-campaign is an internal failure of a trial
            LabError::Core(_) => EXIT_VIOLATION,
        }
    }
}
