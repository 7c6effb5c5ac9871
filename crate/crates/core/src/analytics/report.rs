use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analytics::log::{LogEntry, PromptLog};
use crate::error::{Error, Result};
use crate::model::SnapshotId;
use crate::prompt::PromptKind;
use crate::version::{GraphNode, VersionGraph};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub initial: u32,
    pub features: u32,
    pub bug_fixing: u32,
    pub layout: u32,
    pub other: u32,
    pub total: u32,
}

impl KindCounts {
    pub fn add(&mut self, kind: PromptKind) {
        match kind.folded() {
            PromptKind::Initial => self.initial += 1,
            PromptKind::Feature => self.features += 1,
            PromptKind::BugFix => self.bug_fixing += 1,
            PromptKind::Layout => self.layout += 1,
            _ => self.other += 1,
        }
        self.total += 1;
    }

    pub fn get(&self, kind: PromptKind) -> u32 {
        match kind.folded() {
            PromptKind::Initial => self.initial,
            PromptKind::Feature => self.features,
            PromptKind::BugFix => self.bug_fixing,
            PromptKind::Layout => self.layout,
            _ => self.other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantKinds {
    pub participant: String,
    pub counts: KindCounts,
}

/// Prompts per participant and category.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindReport {
    pub participants: Vec<ParticipantKinds>,
}

pub fn analyze_log(log: &PromptLog) -> KindReport {
    let participants = log
        .participants()
        .into_iter()
        .map(|p| {
            let mut counts = KindCounts::default();
            for e in log.entries_for(p) {
                counts.add(e.resolved_kind());
            }
            ParticipantKinds {
                participant: p.to_string(),
                counts,
            }
        })
        .collect();
    KindReport { participants }
}

fn table(header: &str, columns: &[&str], rows: &[(String, Vec<String>)]) -> String {
    let first = rows.iter().map(|r| r.0.len()).chain([header.len()]).max().unwrap_or(0);
    let width = |i: usize| {
        rows.iter()
            .map(|r| r.1[i].len())
            .chain([columns[i].len()])
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..columns.len()).map(width).collect();
    let mut out = String::new();
    let _ = write!(out, "{header:<first$}");
    for (c, w) in columns.iter().zip(&widths) {
        let _ = write!(out, "  {c:>w$}");
    }
    out.push('\n');
    for (label, cells) in rows {
        let _ = write!(out, "{label:<first$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
    }
    out
}

impl KindReport {
    pub fn participant(&self, name: &str) -> Option<&KindCounts> {
        self.participants.iter().find(|p| p.participant == name).map(|p| &p.counts)
    }

    /// Category rows by participant columns, closed by a total row.
    pub fn render(&self) -> String {
        let columns: Vec<&str> = self.participants.iter().map(|p| p.participant.as_str()).collect();
        let mut rows: Vec<(String, Vec<String>)> = PromptKind::CATEGORIES
            .iter()
            .map(|k| {
                let cells = self.participants.iter().map(|p| p.counts.get(*k).to_string()).collect();
                (k.report_label().to_string(), cells)
            })
            .collect();
        rows.push((
            "Total".to_string(),
            self.participants.iter().map(|p| p.counts.total.to_string()).collect(),
        ));
        table("Category", &columns, &rows)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantRollbacks {
    pub participant: String,
    pub rollbacks: u32,
    pub prompts: u32,
    pub discarded: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollbackReport {
    pub participants: Vec<ParticipantRollbacks>,
    pub total: u32,
}

impl RollbackReport {
    pub fn counts(&self) -> Vec<u32> {
        self.participants.iter().map(|p| p.rollbacks).collect()
    }

    pub fn render(&self) -> String {
        let columns: Vec<&str> = self.participants.iter().map(|p| p.participant.as_str()).collect();
        let row = |f: fn(&ParticipantRollbacks) -> u32| self.participants.iter().map(|p| f(p).to_string()).collect();
        let rows = vec![
            ("Rollbacks".to_string(), row(|p| p.rollbacks)),
            ("Prompts".to_string(), row(|p| p.prompts)),
            ("Discarded".to_string(), row(|p| p.discarded)),
        ];
        let mut out = table("Participant", &columns, &rows);
        let _ = writeln!(out, "Total rollbacks: {}", self.total);
        out
    }
}

pub fn rollback_stats(log: &PromptLog) -> Result<RollbackReport> {
    let mut report = RollbackReport::default();
    for p in log.participants() {
        let entries: Vec<&LogEntry> = log.entries_for(p).collect();
        let graph = log_graph(&entries)?;
        let rollbacks = entries.iter().filter(|e| e.rollback).count() as u32;
        report.total += rollbacks;
        report.participants.push(ParticipantRollbacks {
            participant: p.to_string(),
            rollbacks,
            prompts: entries.len() as u32,
            discarded: graph.discarded_count() as u32,
        });
    }
    Ok(report)
}

/// Prompt `i` (1-based) becomes node `p<i>`, a child of the current head.
/// A rollback flag moves the head back `rollback_steps` parents after the
/// prompt. The root `p0` stands for the scaffold.
pub fn log_graph(entries: &[&LogEntry]) -> Result<VersionGraph> {
    let id = |i: usize| SnapshotId(format!("p{i}"));
    let mut nodes = vec![GraphNode {
        id: id(0),
        parent: None,
        seq: 0,
        label: Some("scaffold".into()),
        page_id: None,
        prompt_record_id: None,
        tree_digest: None,
    }];
    let mut parent_of: Vec<Option<usize>> = vec![None];
    let mut head = 0usize;
    for (k, e) in entries.iter().enumerate() {
        let i = k + 1;
        nodes.push(GraphNode {
            id: id(i),
            parent: Some(id(head)),
            seq: i as u32,
            label: Some(i.to_string()),
            page_id: None,
            prompt_record_id: None,
            tree_digest: None,
        });
        parent_of.push(Some(head));
        head = i;
        if e.rollback {
            for _ in 0..e.rollback_steps {
                head = parent_of[head].ok_or_else(|| {
                    Error::validation(format!(
                        "participant {}: rollback after prompt {i} goes past the scaffold",
                        e.participant
                    ))
                })?;
            }
        }
    }
    VersionGraph::build(nodes, &id(head))
}
