//! Headless driver for the builder: scripted replays against mock fixtures
//! and the study reports over prompt logs or live projects.

pub mod replay;

use std::path::{Path, PathBuf};

use nocode_core::analytics::{
    analyze_log, graph_dot, graph_json, log_graph, project_kinds, project_rollbacks, rollback_stats, KindReport,
    ParticipantKinds, PromptLog, RollbackReport,
};
use nocode_core::store::{find_project, Store};
use nocode_core::version::{version_graph, VersionGraph};
use nocode_core::{Error, Result};

pub use replay::{replay, ExpectFailure, ReplayOptions, ReplayReport, StepError, REPLAY_MODEL};

/// Where a report reads from: a prompt log file or a project in a data root.
pub enum Source {
    Log(PromptLog),
    Project { store: Store, name: String },
}

impl Source {
    /// A path to an existing file is a log; anything else names a project.
    pub fn open(target: &str, data_root: &Path) -> Result<Self> {
        let path = PathBuf::from(target);
        if path.is_file() {
            return Ok(Source::Log(PromptLog::load(&path)?));
        }
        let db = data_root.join("nocode.sqlite");
        if !db.is_file() {
            return Err(Error::Config(format!(
                "`{target}` is not a log file and there is no store at {}",
                db.display()
            )));
        }
        Ok(Source::Project {
            store: Store::open(&db)?,
            name: target.to_string(),
        })
    }

    fn project(store: &Store, name: &str) -> Result<nocode_core::model::Project> {
        store
            .read(|c| find_project(c, name))?
            .ok_or_else(|| Error::NotFound(format!("project `{name}`")))
    }

    pub fn kinds(&self) -> Result<KindReport> {
        match self {
            Source::Log(log) => Ok(analyze_log(log)),
            Source::Project { store, name } => {
                let p = Self::project(store, name)?;
                let counts = store.read(|c| project_kinds(c, &p))?;
                Ok(KindReport {
                    participants: vec![ParticipantKinds {
                        participant: p.name,
                        counts,
                    }],
                })
            }
        }
    }

    pub fn rollbacks(&self) -> Result<RollbackReport> {
        match self {
            Source::Log(log) => rollback_stats(log),
            Source::Project { store, name } => {
                let p = Self::project(store, name)?;
                let r = store.read(|c| project_rollbacks(c, &p))?;
                Ok(RollbackReport {
                    total: r.rollbacks,
                    participants: vec![r],
                })
            }
        }
    }

    /// A log needs `participant` to pick one session.
    pub fn graph(&self, participant: Option<&str>) -> Result<VersionGraph> {
        match self {
            Source::Log(log) => {
                let who = participant.ok_or_else(|| Error::Validation("a log graph needs --participant".into()))?;
                let entries: Vec<_> = log.entries_for(who).collect();
                if entries.is_empty() {
                    return Err(Error::NotFound(format!("participant `{who}`")));
                }
                log_graph(&entries)
            }
            Source::Project { store, name } => {
                let p = Self::project(store, name)?;
                store.read(|c| version_graph(c, &p))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Dot,
    Json,
}

pub fn render_graph(graph: &VersionGraph, format: GraphFormat) -> String {
    match format {
        GraphFormat::Dot => graph_dot(graph),
        GraphFormat::Json => graph_json(graph) + "\n",
    }
}
