//! Snapshot history: every applied response becomes a full-tree,
//! content-addressed snapshot whose parent is the previous HEAD. Rollback
//! moves HEAD back along the parent chain; bypassed snapshots stay stored and
//! show up as abandoned branches.

mod graph;
mod objects;

use std::collections::BTreeSet;

use rusqlite::{params, Connection, OptionalExtension, Row};
use serde::{Deserialize, Serialize};

pub use graph::{AbandonedBranch, GraphNode, VersionGraph};
pub use objects::ObjectStore;

use crate::clock::{Clock, Timestamp};
use crate::digest::{Digest, Hasher};
use crate::error::{Error, Result};
use crate::model::{PageId, PageStatus, Project, ProjectId, RequestId, SnapshotId, Workspace};
use crate::path::RelPath;
use crate::store::save_project_state;

pub const SCAFFOLD_LABEL: &str = "scaffold";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: SnapshotId,
    pub project_id: ProjectId,
    pub seq: u32,
    pub parent: Option<SnapshotId>,
    pub tree_digest: Digest,
    pub prompt_record_id: Option<RequestId>,
    /// Page the projection was attributed to.
    pub page_id: Option<PageId>,
    /// Paths written by the projection that produced this snapshot.
    pub applied_paths: Vec<RelPath>,
    pub label: Option<String>,
    pub created_at: Timestamp,
}

impl Snapshot {
    fn graph_node(&self) -> GraphNode {
        GraphNode {
            id: self.id.clone(),
            parent: self.parent.clone(),
            seq: self.seq,
            label: self.label.clone(),
            page_id: self.page_id.clone(),
            prompt_record_id: self.prompt_record_id.clone(),
            tree_digest: Some(self.tree_digest),
        }
    }
}

/// What produced a commit.
#[derive(Debug, Clone, Default)]
pub struct CommitMeta {
    pub prompt_record_id: Option<RequestId>,
    pub page_id: Option<PageId>,
    pub applied_paths: Vec<RelPath>,
    pub label: Option<String>,
}

/// A HEAD move recorded by [`rollback`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RollbackEvent {
    pub from: SnapshotId,
    pub to: SnapshotId,
    pub steps: u32,
    pub created_at: Timestamp,
}

fn snapshot_id(project: &ProjectId, seq: u32, parent: Option<&SnapshotId>, tree: &Digest) -> SnapshotId {
    let mut h = Hasher::new();
    h.update(project.as_str())
        .update([0])
        .update(seq.to_be_bytes())
        .update(parent.map(|p| p.as_str()).unwrap_or(""))
        .update([0])
        .update(tree.as_bytes());
    SnapshotId(format!("{}_{}", SnapshotId::PREFIX, &h.finish().to_hex()[..16]))
}

const COLUMNS: &str =
    "id, project_id, seq, parent, tree_digest, prompt_record_id, page_id, applied_paths, label, created_at";

fn from_row(row: &Row<'_>) -> rusqlite::Result<(Snapshot, String, String)> {
    Ok((
        Snapshot {
            id: SnapshotId(row.get(0)?),
            project_id: ProjectId(row.get(1)?),
            seq: row.get(2)?,
            parent: row.get::<_, Option<String>>(3)?.map(SnapshotId),
            tree_digest: Digest::from_bytes([0; 32]),
            prompt_record_id: row.get::<_, Option<String>>(5)?.map(RequestId),
            page_id: row.get::<_, Option<String>>(6)?.map(PageId),
            applied_paths: Vec::new(),
            label: row.get(8)?,
            created_at: Timestamp(row.get(9)?),
        },
        row.get(4)?,
        row.get(7)?,
    ))
}

fn finish_row((mut snap, digest, paths): (Snapshot, String, String)) -> Result<Snapshot> {
    snap.tree_digest = digest
        .parse()
        .map_err(|e| Error::config(format!("snapshot {}: {e}", snap.id)))?;
    snap.applied_paths = serde_json::from_str(&paths).map_err(|e| Error::config(format!("snapshot {}: {e}", snap.id)))?;
    Ok(snap)
}

pub fn get_snapshot(conn: &Connection, project_id: &ProjectId, id: &SnapshotId) -> Result<Snapshot> {
    let row = conn
        .query_row(
            &format!("SELECT {COLUMNS} FROM snapshots WHERE id = ?1 AND project_id = ?2"),
            params![id.as_str(), project_id.as_str()],
            from_row,
        )
        .optional()?;
    finish_row(row.ok_or_else(|| Error::not_found(format!("snapshot `{id}`")))?)
}

/// All snapshots of a project in creation order.
pub fn list_snapshots(conn: &Connection, project_id: &ProjectId) -> Result<Vec<Snapshot>> {
    let mut stmt = conn.prepare(&format!("SELECT {COLUMNS} FROM snapshots WHERE project_id = ?1 ORDER BY seq"))?;
    let rows = stmt.query_map([project_id.as_str()], from_row)?;
    rows.map(|r| finish_row(r?)).collect()
}

/// Finds a snapshot by id or label. Labels may repeat; the newest wins.
pub fn find_snapshot(conn: &Connection, project_id: &ProjectId, id_or_label: &str) -> Result<Snapshot> {
    let all = list_snapshots(conn, project_id)?;
    all.iter()
        .find(|s| s.id.as_str() == id_or_label)
        .or_else(|| all.iter().rev().find(|s| s.label.as_deref() == Some(id_or_label)))
        .cloned()
        .ok_or_else(|| Error::not_found(format!("snapshot `{id_or_label}`")))
}

pub fn list_rollbacks(conn: &Connection, project_id: &ProjectId) -> Result<Vec<RollbackEvent>> {
    let mut stmt = conn.prepare(
        "SELECT from_snapshot, to_snapshot, steps, created_at FROM rollbacks WHERE project_id = ?1 ORDER BY id",
    )?;
    let rows = stmt.query_map([project_id.as_str()], |row| {
        Ok(RollbackEvent {
            from: SnapshotId(row.get(0)?),
            to: SnapshotId(row.get(1)?),
            steps: row.get(2)?,
            created_at: Timestamp(row.get(3)?),
        })
    })?;
    Ok(rows.collect::<rusqlite::Result<_>>()?)
}

fn insert(conn: &Connection, s: &Snapshot) -> Result<()> {
    conn.execute(
        &format!("INSERT INTO snapshots ({COLUMNS}) VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10)"),
        params![
            s.id.as_str(),
            s.project_id.as_str(),
            s.seq,
            s.parent.as_ref().map(|p| p.as_str()),
            s.tree_digest.to_hex(),
            s.prompt_record_id.as_ref().map(|r| r.as_str()),
            s.page_id.as_ref().map(|p| p.as_str()),
            serde_json::to_string(&s.applied_paths)?,
            s.label,
            s.created_at.0,
        ],
    )?;
    Ok(())
}

fn next_seq(conn: &Connection, project_id: &ProjectId) -> Result<u32> {
    let max: Option<u32> = conn.query_row(
        "SELECT MAX(seq) FROM snapshots WHERE project_id = ?1",
        [project_id.as_str()],
        |r| r.get(0),
    )?;
    Ok(max.map_or(0, |m| m + 1))
}

/// Stores the scaffold tree as the project's parentless root snapshot.
pub fn commit_root(
    conn: &Connection,
    objects: &ObjectStore,
    project: &mut Project,
    workspace: &Workspace,
    clock: &dyn Clock,
) -> Result<Snapshot> {
    if project.head_snapshot.is_some() || next_seq(conn, &project.id)? != 0 {
        return Err(Error::contract(format!("project `{}` is already scaffolded", project.name)));
    }
    let tree = objects.put_tree(workspace)?;
    let snap = Snapshot {
        id: snapshot_id(&project.id, 0, None, &tree),
        project_id: project.id.clone(),
        seq: 0,
        parent: None,
        tree_digest: tree,
        prompt_record_id: None,
        page_id: None,
        applied_paths: Vec::new(),
        label: Some(SCAFFOLD_LABEL.to_string()),
        created_at: clock.now(),
    };
    insert(conn, &snap)?;
    project.head_snapshot = Some(snap.id.clone());
    save_project_state(conn, project)?;
    Ok(snap)
}

fn head_of(conn: &Connection, project: &Project) -> Result<Snapshot> {
    let id = project
        .head_snapshot
        .as_ref()
        .ok_or_else(|| Error::contract(format!("project `{}` has not been scaffolded", project.name)))?;
    get_snapshot(conn, &project.id, id)
}

/// Records `workspace` as a child of HEAD and advances HEAD to it. Page
/// manifests and statuses are reconciled against the new history.
pub fn commit_snapshot(
    conn: &Connection,
    objects: &ObjectStore,
    project: &mut Project,
    workspace: &Workspace,
    meta: CommitMeta,
    clock: &dyn Clock,
) -> Result<Snapshot> {
    let head = head_of(conn, project)?;
    let digest = workspace.tree_digest();
    if digest == head.tree_digest {
        return Err(Error::NoChange(digest.short()));
    }
    if let Some(page) = &meta.page_id {
        if project.page(page).is_none() {
            return Err(Error::validation(format!("page `{page}` is not part of project `{}`", project.name)));
        }
    }
    let tree = objects.put_tree(workspace)?;
    let seq = next_seq(conn, &project.id)?;
    let snap = Snapshot {
        id: snapshot_id(&project.id, seq, Some(&head.id), &tree),
        project_id: project.id.clone(),
        seq,
        parent: Some(head.id),
        tree_digest: tree,
        prompt_record_id: meta.prompt_record_id,
        page_id: meta.page_id,
        applied_paths: meta.applied_paths,
        label: meta.label,
        created_at: clock.now(),
    };
    insert(conn, &snap)?;
    project.head_snapshot = Some(snap.id.clone());
    reconcile(conn, objects, project)?;
    Ok(snap)
}

/// Moves HEAD `steps` parents back and returns the restored tree.
///
/// One call is one rollback event regardless of `steps`. The restored tree
/// is reloaded from the object store and checked against the snapshot's
/// digest before anything is persisted.
pub fn rollback(
    conn: &Connection,
    objects: &ObjectStore,
    project: &mut Project,
    steps: u32,
    clock: &dyn Clock,
) -> Result<(Snapshot, Workspace)> {
    if steps == 0 {
        return Err(Error::validation("rollback steps must be at least 1"));
    }
    let head = head_of(conn, project)?;
    if head.parent.is_none() {
        return Err(Error::AtRoot);
    }
    let mut target = head.clone();
    for taken in 0..steps {
        match &target.parent {
            Some(parent) => target = get_snapshot(conn, &project.id, parent)?,
            None => {
                return Err(Error::validation(format!(
                    "cannot roll back {steps} steps: HEAD is only {taken} steps above the scaffold"
                )))
            }
        }
    }
    let ws = objects.load_tree(&target.tree_digest)?;
    conn.execute(
        "INSERT INTO rollbacks (project_id, from_snapshot, to_snapshot, steps, created_at) VALUES (?1, ?2, ?3, ?4, ?5)",
        params![project.id.as_str(), head.id.as_str(), target.id.as_str(), steps, clock.now().0],
    )?;
    project.head_snapshot = Some(target.id.clone());
    reconcile(conn, objects, project)?;
    Ok((target, ws))
}

/// Moves HEAD to any snapshot of the project. Later commits branch from it.
pub fn checkout(
    conn: &Connection,
    objects: &ObjectStore,
    project: &mut Project,
    id: &SnapshotId,
) -> Result<(Snapshot, Workspace)> {
    let target = get_snapshot(conn, &project.id, id)?;
    let ws = objects.load_tree(&target.tree_digest)?;
    project.head_snapshot = Some(target.id.clone());
    reconcile(conn, objects, project)?;
    Ok((target, ws))
}

/// The HEAD tree of a project.
pub fn head_workspace(conn: &Connection, objects: &ObjectStore, project: &Project) -> Result<Workspace> {
    objects.load_tree(&head_of(conn, project)?.tree_digest)
}

pub fn version_graph(conn: &Connection, project: &Project) -> Result<VersionGraph> {
    let head = project
        .head_snapshot
        .as_ref()
        .ok_or_else(|| Error::contract(format!("project `{}` has not been scaffolded", project.name)))?;
    let nodes = list_snapshots(conn, &project.id)?.iter().map(Snapshot::graph_node).collect();
    VersionGraph::build(nodes, head)
}

/// Recomputes every page's manifest and status from the history and
/// persists the project.
///
/// A page owns the paths applied by snapshots attributed to it on the
/// root-to-HEAD path, limited to the paths in HEAD. A page is generated once
/// any snapshot, on any branch, is attributed to it.
fn reconcile(conn: &Connection, objects: &ObjectStore, project: &mut Project) -> Result<()> {
    let all = list_snapshots(conn, &project.id)?;
    let head = head_of(conn, project)?;
    let head_paths: BTreeSet<RelPath> = objects.load_tree(&head.tree_digest)?.paths().cloned().collect();
    let by_id: std::collections::HashMap<&SnapshotId, &Snapshot> = all.iter().map(|s| (&s.id, s)).collect();
    let mut path_snaps = Vec::new();
    let mut cursor = Some(&head.id);
    while let Some(id) = cursor {
        let s = by_id[id];
        path_snaps.push(s);
        cursor = s.parent.as_ref();
    }
    for page in &mut project.pages {
        let mut manifest = BTreeSet::new();
        for s in &path_snaps {
            if s.page_id.as_ref() == Some(&page.id) {
                manifest.extend(s.applied_paths.iter().filter(|p| head_paths.contains(p)).cloned());
            }
        }
        page.file_manifest = manifest;
        if all.iter().any(|s| s.page_id.as_ref() == Some(&page.id)) {
            page.status = PageStatus::Generated;
        } else if page.status == PageStatus::Generated {
            page.status = PageStatus::Pending;
        }
    }
    save_project_state(conn, project)
}
