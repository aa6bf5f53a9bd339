use std::path::Path;

use fuzztarget::dataset::DatasetError;
use fuzztarget::metrics::{CurveError, MetricsError};
use fuzztarget::pipeline::ExtractError;
use fuzztarget::tuning::TuningError;
use fuzztarget::ModelError;
use fuzztarget_service::ServiceError;
use thiserror::Error;

/// Failures are either the caller's (bad input, exit 1) or ours (exit 2).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

macro_rules! user_errors {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::User(e.to_string())
            }
        })*
    };
}

user_errors!(DatasetError, ModelError, MetricsError, CurveError, TuningError, ExtractError);

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Io(_) => CliError::Internal(e.to_string()),
            other => CliError::User(other.to_string()),
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path).map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))
}

/// Writes `bytes`, creating parent directories.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .map_err(|e| CliError::User(format!("cannot create {}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| CliError::User(format!("cannot write {}: {e}", path.display())))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
