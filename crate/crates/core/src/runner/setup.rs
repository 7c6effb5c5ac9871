use rusqlite::Connection;

use crate::catalog::Catalog;
use crate::clock::{Clock, IdSource};
use crate::error::{Error, Result};
use crate::model::{PageId, Project};
use crate::projector::fs::FileSink;
use crate::projector::{apply_projection, ProjectionResult};
use crate::version::{self, CommitMeta, ObjectStore, Snapshot};

/// Materializes the profile's scaffold into `sink` and commits it as the
/// root snapshot.
pub fn scaffold(
    conn: &Connection,
    objects: &ObjectStore,
    catalog: &Catalog,
    project: &mut Project,
    sink: &mut dyn FileSink,
    clock: &dyn Clock,
) -> Result<Snapshot> {
    let profile = catalog.profile(&project.stack_profile_id)?;
    if project.head_snapshot.is_some() {
        return Err(Error::contract(format!("project `{}` is already scaffolded", project.name)));
    }
    let ws = profile.scaffold_workspace();
    for entry in ws.entries() {
        sink.write(&entry.path, &entry.content)?;
    }
    version::commit_root(conn, objects, project, &ws, clock)
}

/// Adds the feature's page and applies its canned files without a model
/// call. The snapshot is labeled with the feature id.
pub fn apply_predefined_feature(
    conn: &Connection,
    objects: &ObjectStore,
    catalog: &Catalog,
    project: &mut Project,
    feature_id: &str,
    sink: &mut dyn FileSink,
    ids: &dyn IdSource,
    clock: &dyn Clock,
) -> Result<(Snapshot, ProjectionResult)> {
    let profile = catalog.profile(&project.stack_profile_id)?;
    let feature = profile
        .feature(feature_id)
        .ok_or_else(|| Error::not_found(format!("predefined feature `{feature_id}` in profile `{}`", profile.id)))?;
    if project.page_by_name(&feature.page_name).is_some() {
        return Err(Error::conflict(format!(
            "feature `{feature_id}` is already applied: page `{}` exists",
            feature.page_name
        )));
    }
    let mut ws = version::head_workspace(conn, objects, project)?;
    let page_id = PageId::generate(ids);
    let mut page = project.add_page(page_id.clone(), &feature.page_name, &feature.description)?.clone();
    let result = apply_projection(&mut ws, &feature.blocks(), &mut page, sink, &profile.ignore)?;
    if result.applied.len() != feature.canned_projection.len() {
        return Err(Error::config(format!("feature `{feature_id}` has files the projector refused")));
    }
    let meta = CommitMeta {
        prompt_record_id: None,
        page_id: Some(page_id),
        applied_paths: result.applied_paths().cloned().collect(),
        label: Some(feature.id.clone()),
    };
    let snap = version::commit_snapshot(conn, objects, project, &ws, meta, clock)?;
    Ok((snap, result))
}
