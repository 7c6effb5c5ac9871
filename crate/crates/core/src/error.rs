use std::fmt;

use crate::path::PathRejection;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error classes. The HTTP layer maps these onto status codes and the
/// CLI onto exit codes, so they are a stable part of the public surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorKind {
    Validation,
    Conflict,
    NotFound,
    ContractViolation,
    Config,
    NoChange,
    AtRoot,
    EmptyProjection,
    ProviderTimeout,
    Provider,
    FixtureMissing,
    InstallFailed,
    PortConflict,
    Storage,
    Io,
}

impl ErrorKind {
    pub fn code(self) -> &'static str {
        match self {
            ErrorKind::Validation => "validation",
            ErrorKind::Conflict => "conflict",
            ErrorKind::NotFound => "not-found",
            ErrorKind::ContractViolation => "contract-violation",
            ErrorKind::Config => "configuration",
            ErrorKind::NoChange => "no-change",
            ErrorKind::AtRoot => "at-root",
            ErrorKind::EmptyProjection => "empty-projection",
            ErrorKind::ProviderTimeout => "provider-timeout",
            ErrorKind::Provider => "provider-error",
            ErrorKind::FixtureMissing => "fixture-missing",
            ErrorKind::InstallFailed => "install-failed",
            ErrorKind::PortConflict => "port-conflict",
            ErrorKind::Storage => "storage",
            ErrorKind::Io => "io",
        }
    }
}

impl fmt::Display for ErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("no change: workspace digest equals head digest {0}")]
    NoChange(String),
    #[error("at root: head is the scaffold snapshot")]
    AtRoot,
    #[error("empty projection: response contained no applicable files")]
    EmptyProjection,
    #[error("provider timed out after {attempts} attempt(s)")]
    ProviderTimeout { attempts: u32 },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("fixture missing for request hash {hash}")]
    FixtureMissing { hash: String },
    #[error("install failed: `{command}` exited with {exit_code:?}")]
    InstallFailed {
        command: String,
        exit_code: Option<i32>,
        log_tail: Vec<String>,
    },
    #[error("port conflict: {0}")]
    PortConflict(String),
    #[error("unsafe path `{path}`: {reason}")]
    UnsafePath { path: String, reason: PathRejection },
    #[error("storage error: {0}")]
    Storage(#[from] rusqlite::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Validation(_) | Error::UnsafePath { .. } => ErrorKind::Validation,
            Error::Conflict(_) => ErrorKind::Conflict,
            Error::NotFound(_) => ErrorKind::NotFound,
            Error::ContractViolation(_) => ErrorKind::ContractViolation,
            Error::Config(_) => ErrorKind::Config,
            Error::NoChange(_) => ErrorKind::NoChange,
            Error::AtRoot => ErrorKind::AtRoot,
            Error::EmptyProjection => ErrorKind::EmptyProjection,
            Error::ProviderTimeout { .. } => ErrorKind::ProviderTimeout,
            Error::Provider(_) => ErrorKind::Provider,
            Error::FixtureMissing { .. } => ErrorKind::FixtureMissing,
            Error::InstallFailed { .. } => ErrorKind::InstallFailed,
            Error::PortConflict(_) => ErrorKind::PortConflict,
            Error::Storage(_) => ErrorKind::Storage,
            Error::Io(_) => ErrorKind::Io,
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn conflict(msg: impl Into<String>) -> Self {
        Error::Conflict(msg.into())
    }

    pub(crate) fn not_found(msg: impl Into<String>) -> Self {
        Error::NotFound(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Validation(format!("json: {err}"))
    }
}
