//! The HTTP/JSON service: project setup, prompt jobs, history, rollback and
//! app runs under `/api/v1`. [`Service`] holds the logic and can be driven
//! in-process; [`http::router`] exposes it over axum.

pub mod config;
pub mod http;
pub mod jobs;
pub mod service;

use serde::{Deserialize, Serialize};

use nocode_core::Error;

pub use config::{RunnerSection, ServerConfig};
pub use jobs::{Job, JobKind, JobRequest, JobResult, JobState};
pub use service::{FeatureSummary, FileSummary, ProjectView, Service, ServiceOptions, Submission};

/// Wire form of an error: a stable code and a human-readable message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_tail: Vec<String>,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> Self {
        ApiError {
            code: code.to_string(),
            message: message.into(),
            log_tail: Vec::new(),
        }
    }
}

impl From<&Error> for ApiError {
    fn from(e: &Error) -> Self {
        let mut out = ApiError::new(e.kind().code(), e.to_string());
        if let Error::InstallFailed { log_tail, .. } = e {
            out.log_tail = log_tail.clone();
        }
        out
    }
}
