use std::fmt::Display;
use std::path::Path;

use multispec::calib::CalibError;
use multispec::io::IoError;
use multispec::ply::PlyError;
use multispec::registration::RegistrationError;
use thiserror::Error;

/// Errors of the command-line stages, each with its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or unreadable configuration, or an unreadable or corrupt input
    /// file. Exit code 2.
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    /// Not enough usable calibration views. Exit code 3.
    #[error("{0}")]
    InsufficientViews(String),
    /// Calibration and frames disagree on cameras or sizes. Exit code 3.
    #[error("{0}")]
    Mismatch(String),
    /// Anything else (for example a diverged refinement). Exit code 1.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn config(path: &Path, e: impl Display) -> Self {
        CliError::Input {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input { .. } => 2,
            CliError::InsufficientViews(_) | CliError::Mismatch(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        let path = e.path().display().to_string();
        let message = match e {
            IoError::Io { source, .. } => source.to_string(),
            IoError::Format { message, .. } => message,
        };
        CliError::Input { path, message }
    }
}

impl From<CalibError> for CliError {
    fn from(e: CalibError) -> Self {
        match e.root() {
            CalibError::InsufficientViews { .. } => CliError::InsufficientViews(e.to_string()),
            CalibError::Format { path, message } => CliError::Input {
                path: path.clone(),
                message: message.clone(),
            },
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<RegistrationError> for CliError {
    fn from(e: RegistrationError) -> Self {
        CliError::Mismatch(e.to_string())
    }
}

pub fn ply_error(path: &Path, e: PlyError) -> CliError {
    CliError::config(path, e)
}
