//! Study analytics over prompt logs and live projects, plus the session
//! script format used by replays.

mod export;
mod log;
mod report;
mod script;

use rusqlite::Connection;

pub use export::{graph_dot, graph_export, graph_json, ExportNode, GraphCounts, GraphExport};
pub use log::{LogEntry, PromptLog};
pub use report::{
    analyze_log, log_graph, rollback_stats, KindCounts, KindReport, ParticipantKinds, ParticipantRollbacks,
    RollbackReport,
};
pub use script::{Expectation, ScriptLine, SessionScript, Step};

use crate::error::Result;
use crate::gateway::{count_requests, transcript};
use crate::model::Project;
use crate::version::{list_rollbacks, version_graph};

/// Prompt counts of a live project, using the kinds declared at submit time.
pub fn project_kinds(conn: &Connection, project: &Project) -> Result<KindCounts> {
    let mut counts = KindCounts::default();
    for ex in transcript(conn, &project.id)? {
        counts.add(ex.request.composed_prompt.kind);
    }
    Ok(counts)
}

/// Rollback statistics of a live project, reported as one participant.
pub fn project_rollbacks(conn: &Connection, project: &Project) -> Result<ParticipantRollbacks> {
    let graph = version_graph(conn, project)?;
    Ok(ParticipantRollbacks {
        participant: project.name.clone(),
        rollbacks: list_rollbacks(conn, &project.id)?.len() as u32,
        prompts: count_requests(conn, Some(&project.id))? as u32,
        discarded: graph.discarded_count() as u32,
    })
}
