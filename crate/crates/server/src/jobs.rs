use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

use nocode_core::clock::Timestamp;
use nocode_core::model::{JobId, PageId, ProjectId, RequestId, SnapshotId};
use nocode_core::projector::{ParseWarning, RejectedFile};
use nocode_core::prompt::PromptKind;
use nocode_core::{Error, Result};

use crate::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Queued => "queued",
            JobState::Running => "running",
            JobState::Done => "done",
            JobState::Failed => "failed",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "queued" => JobState::Queued,
            "running" => JobState::Running,
            "done" => JobState::Done,
            "failed" => JobState::Failed,
            other => return Err(Error::Config(format!("unknown job state `{other}`"))),
        })
    }

    pub fn is_finished(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

/// Ticket category: first generation of a page, in-page refinement, or a
/// transition between two pages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JobKind {
    Generation,
    Refinement,
    Transition,
}

impl JobKind {
    pub fn of(kind: PromptKind) -> Self {
        match kind {
            PromptKind::Initial => JobKind::Generation,
            PromptKind::Transition => JobKind::Transition,
            _ => JobKind::Refinement,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobKind::Generation => "generation",
            JobKind::Refinement => "refinement",
            JobKind::Transition => "transition",
        }
    }
}

/// What the worker was asked to do.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobRequest {
    pub kind: PromptKind,
    pub page_id: PageId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_page_id: Option<PageId>,
    #[serde(default)]
    pub text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobResult {
    pub snapshot_id: Option<SnapshotId>,
    pub request_id: Option<RequestId>,
    pub narrative: String,
    pub applied: Vec<String>,
    pub rejected: Vec<RejectedFile>,
    pub warnings: Vec<ParseWarning>,
    /// The reply contained no applicable file blocks, so no snapshot.
    pub no_files_emitted: bool,
    /// The reply rewrote files with identical bytes, so no snapshot.
    pub unchanged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Job {
    pub id: JobId,
    pub project_id: ProjectId,
    pub kind: JobKind,
    pub state: JobState,
    pub request: JobRequest,
    pub result: Option<JobResult>,
    pub error: Option<ApiError>,
    pub created_at: Timestamp,
    pub updated_at: Timestamp,
}

pub fn insert_job(conn: &Connection, job: &Job) -> Result<()> {
    conn.execute(
        "INSERT INTO jobs (id, project_id, kind, state, request, result, error, created_at, updated_at)
         VALUES (?1, ?2, ?3, ?4, ?5, NULL, NULL, ?6, ?6)",
        params![
            job.id.as_str(),
            job.project_id.as_str(),
            job.kind.as_str(),
            job.state.as_str(),
            serde_json::to_string(&job.request)?,
            job.created_at.0,
        ],
    )?;
    Ok(())
}

pub fn update_job(conn: &Connection, job: &Job) -> Result<()> {
    let result = job.result.as_ref().map(serde_json::to_string).transpose()?;
    let error = job.error.as_ref().map(serde_json::to_string).transpose()?;
    conn.execute(
        "UPDATE jobs SET state = ?2, result = ?3, error = ?4, updated_at = ?5 WHERE id = ?1",
        params![job.id.as_str(), job.state.as_str(), result, error, job.updated_at.0],
    )?;
    Ok(())
}

fn corrupt(e: serde_json::Error) -> Error {
    Error::Config(format!("corrupt job row: {e}"))
}

pub fn get_job(conn: &Connection, id: &JobId) -> Result<Job> {
    let row = conn
        .query_row(
            "SELECT project_id, state, request, result, error, created_at, updated_at FROM jobs WHERE id = ?1",
            [id.as_str()],
            |r| {
                Ok((
                    r.get::<_, String>(0)?,
                    r.get::<_, String>(1)?,
                    r.get::<_, String>(2)?,
                    r.get::<_, Option<String>>(3)?,
                    r.get::<_, Option<String>>(4)?,
                    r.get::<_, i64>(5)?,
                    r.get::<_, i64>(6)?,
                ))
            },
        )
        .optional()?
        .ok_or_else(|| Error::NotFound(format!("job {id}")))?;
    let (project_id, state, request, result, error, created, updated) = row;
    let request: JobRequest = serde_json::from_str(&request).map_err(corrupt)?;
    Ok(Job {
        id: id.clone(),
        project_id: ProjectId(project_id),
        kind: JobKind::of(request.kind),
        state: JobState::parse(&state)?,
        request,
        result: result.map(|r| serde_json::from_str(&r)).transpose().map_err(corrupt)?,
        error: error.map(|e| serde_json::from_str(&e)).transpose().map_err(corrupt)?,
        created_at: Timestamp(created),
        updated_at: Timestamp(updated),
    })
}

/// Marks jobs left queued or running by a previous process as failed.
pub fn fail_interrupted(conn: &Connection, now: Timestamp) -> Result<usize> {
    let error = serde_json::to_string(&ApiError::new(
        "interrupted",
        "the service stopped before this job finished",
    ))?;
    Ok(conn.execute(
        "UPDATE jobs SET state = 'failed', error = ?1, updated_at = ?2 WHERE state IN ('queued', 'running')",
        params![error, now.0],
    )?)
}
