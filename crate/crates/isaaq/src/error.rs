use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid JSON: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: invalid config: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("{path}: unreadable image: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("no cached {what} at {path}; run `isaaq {command}` first")]
    MissingCache { what: String, path: PathBuf, command: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] isaaq_core::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Shape of the JSON object the CLI prints on stderr.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Error {
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json { .. } | Error::Toml { .. } | Error::Format { .. } | Error::Image { .. } => "format",
            Error::MissingCache { .. } => "missing_cache",
            Error::Usage(_) => "usage",
            Error::Core(isaaq_core::Error::Validation { .. }) => "validation",
            Error::Core(isaaq_core::Error::NotFound { .. }) => "not_found",
            Error::Core(isaaq_core::Error::Config(_)) => "config",
            Error::Core(isaaq_core::Error::ParamMismatch(_)) => "param_mismatch",
            Error::Core(_) => "core",
        }
    }

    pub fn report(&self) -> ErrorReport {
        let path = match self {
            Error::Io { path, .. }
            | Error::Json { path, .. }
            | Error::Toml { path, .. }
            | Error::Image { path, .. }
            | Error::Format { path, .. }
            | Error::MissingCache { path, .. } => Some(path.clone()),
            _ => None,
        };
        ErrorReport { error: self.kind(), message: self.to_string(), path }
    }
}

pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
    let path = path.into();
    move |source| Error::Json { path, source }
}
