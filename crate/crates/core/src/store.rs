//! Relational metadata in one SQLite file: projects, pages, snapshots,
//! prompt exchanges, rollbacks and jobs. File bytes live in the object store
//! (see [`crate::version::ObjectStore`]).
//!
//! Row helpers take a plain [`Connection`] so callers can compose several
//! of them inside one [`Store::write`] transaction.

use std::path::Path;
use std::sync::{Mutex, MutexGuard};

use rusqlite::{params, Connection, OptionalExtension, Row};

use crate::clock::Timestamp;
use crate::error::{Error, Result};
use crate::model::{page_name_key, Page, PageId, PageStatus, Project, ProjectId, SnapshotId};

const SCHEMA: &str = r#"
CREATE TABLE IF NOT EXISTS projects (
    id TEXT PRIMARY KEY,
    name TEXT NOT NULL,
    name_key TEXT NOT NULL UNIQUE,
    context_description TEXT NOT NULL,
    created_at INTEGER NOT NULL,
    head_snapshot TEXT,
    stack_profile_id TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS pages (
    id TEXT PRIMARY KEY,
    project_id TEXT NOT NULL REFERENCES projects(id),
    position INTEGER NOT NULL,
    name TEXT NOT NULL,
    name_key TEXT NOT NULL,
    description TEXT NOT NULL,
    file_manifest TEXT NOT NULL,
    status TEXT NOT NULL,
    UNIQUE (project_id, name_key)
);
CREATE TABLE IF NOT EXISTS snapshots (
    id TEXT PRIMARY KEY,
    project_id TEXT NOT NULL REFERENCES projects(id),
    seq INTEGER NOT NULL,
    parent TEXT REFERENCES snapshots(id),
    tree_digest TEXT NOT NULL,
    prompt_record_id TEXT REFERENCES prompt_requests(id),
    page_id TEXT,
    applied_paths TEXT NOT NULL,
    label TEXT,
    created_at INTEGER NOT NULL,
    UNIQUE (project_id, seq)
);
CREATE TABLE IF NOT EXISTS rollbacks (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    project_id TEXT NOT NULL REFERENCES projects(id),
    from_snapshot TEXT NOT NULL REFERENCES snapshots(id),
    to_snapshot TEXT NOT NULL REFERENCES snapshots(id),
    steps INTEGER NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS prompt_requests (
    id TEXT PRIMARY KEY,
    project_id TEXT NOT NULL REFERENCES projects(id),
    seq INTEGER NOT NULL,
    page_id TEXT,
    kind TEXT NOT NULL,
    composed_prompt TEXT NOT NULL,
    model_id TEXT NOT NULL,
    temperature REAL NOT NULL CHECK (temperature = 0),
    max_tokens INTEGER,
    request_hash TEXT NOT NULL,
    sent_at INTEGER NOT NULL,
    UNIQUE (project_id, seq)
);
CREATE TABLE IF NOT EXISTS prompt_responses (
    id TEXT PRIMARY KEY,
    request_id TEXT NOT NULL UNIQUE REFERENCES prompt_requests(id),
    text TEXT NOT NULL,
    prompt_tokens INTEGER,
    completion_tokens INTEGER,
    latency_ms INTEGER NOT NULL,
    finish_reason TEXT NOT NULL,
    received_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS jobs (
    id TEXT PRIMARY KEY,
    project_id TEXT NOT NULL REFERENCES projects(id),
    kind TEXT NOT NULL,
    state TEXT NOT NULL,
    request TEXT NOT NULL,
    result TEXT,
    error TEXT,
    created_at INTEGER NOT NULL,
    updated_at INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS snapshots_by_project ON snapshots (project_id, seq);
CREATE INDEX IF NOT EXISTS requests_by_project ON prompt_requests (project_id, seq);
"#;

pub struct Store {
    conn: Mutex<Connection>,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "FULL")?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self> {
        conn.pragma_update(None, "foreign_keys", "ON")?;
        conn.busy_timeout(std::time::Duration::from_secs(5))?;
        conn.execute_batch(SCHEMA)?;
        Ok(Store { conn: Mutex::new(conn) })
    }

    fn lock(&self) -> MutexGuard<'_, Connection> {
        self.conn.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn read<T>(&self, f: impl FnOnce(&Connection) -> Result<T>) -> Result<T> {
        f(&self.lock())
    }

    /// Runs `f` in a transaction, committed only if `f` succeeds.
    pub fn write<T>(&self, f: impl FnOnce(&Connection) -> Result<T>) -> Result<T> {
        let mut conn = self.lock();
        let tx = conn.transaction()?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }
}

pub(crate) fn is_unique_violation(err: &rusqlite::Error) -> bool {
    matches!(
        err,
        rusqlite::Error::SqliteFailure(e, _) if e.code == rusqlite::ErrorCode::ConstraintViolation
    )
}

pub fn insert_project(conn: &Connection, project: &Project) -> Result<()> {
    let res = conn.execute(
        "INSERT INTO projects (id, name, name_key, context_description, created_at, head_snapshot, stack_profile_id)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7)",
        params![
            project.id.as_str(),
            project.name,
            page_name_key(&project.name),
            project.context_description,
            project.created_at.0,
            project.head_snapshot.as_ref().map(|s| s.as_str()),
            project.stack_profile_id,
        ],
    );
    match res {
        Ok(_) => {}
        Err(e) if is_unique_violation(&e) => {
            return Err(Error::conflict(format!("a project named `{}` already exists", project.name)))
        }
        Err(e) => return Err(e.into()),
    }
    for (pos, page) in project.pages.iter().enumerate() {
        insert_page(conn, &project.id, page, pos)?;
    }
    Ok(())
}

pub fn insert_page(conn: &Connection, project_id: &ProjectId, page: &Page, position: usize) -> Result<()> {
    let res = conn.execute(
        "INSERT INTO pages (id, project_id, position, name, name_key, description, file_manifest, status)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
        params![
            page.id.as_str(),
            project_id.as_str(),
            position as i64,
            page.name,
            page.name_key(),
            page.description,
            serde_json::to_string(&page.file_manifest)?,
            page.status.as_str(),
        ],
    );
    match res {
        Ok(_) => Ok(()),
        Err(e) if is_unique_violation(&e) => Err(Error::conflict(format!("page `{}` already exists", page.name))),
        Err(e) => Err(e.into()),
    }
}

/// Persists the mutable parts of a project: HEAD and every page's manifest
/// and status. Pages not yet stored are inserted.
pub fn save_project_state(conn: &Connection, project: &Project) -> Result<()> {
    conn.execute(
        "UPDATE projects SET head_snapshot = ?2 WHERE id = ?1",
        params![project.id.as_str(), project.head_snapshot.as_ref().map(|s| s.as_str())],
    )?;
    for (pos, page) in project.pages.iter().enumerate() {
        let n = conn.execute(
            "UPDATE pages SET file_manifest = ?2, status = ?3 WHERE id = ?1",
            params![page.id.as_str(), serde_json::to_string(&page.file_manifest)?, page.status.as_str()],
        )?;
        if n == 0 {
            insert_page(conn, &project.id, page, pos)?;
        }
    }
    Ok(())
}

fn project_from_row(row: &Row<'_>) -> rusqlite::Result<Project> {
    Ok(Project {
        id: ProjectId(row.get(0)?),
        name: row.get(1)?,
        context_description: row.get(2)?,
        created_at: Timestamp(row.get(3)?),
        head_snapshot: row.get::<_, Option<String>>(4)?.map(SnapshotId),
        stack_profile_id: row.get(5)?,
        pages: Vec::new(),
    })
}

const PROJECT_COLUMNS: &str = "id, name, context_description, created_at, head_snapshot, stack_profile_id";

fn load_pages(conn: &Connection, project: &mut Project) -> Result<()> {
    let mut stmt = conn.prepare(
        "SELECT id, name, description, file_manifest, status FROM pages WHERE project_id = ?1 ORDER BY position",
    )?;
    let rows = stmt.query_map([project.id.as_str()], |row| {
        Ok((
            row.get::<_, String>(0)?,
            row.get::<_, String>(1)?,
            row.get::<_, String>(2)?,
            row.get::<_, String>(3)?,
            row.get::<_, String>(4)?,
        ))
    })?;
    for row in rows {
        let (id, name, description, manifest, status) = row?;
        project.pages.push(Page {
            id: PageId(id),
            name,
            description,
            file_manifest: serde_json::from_str(&manifest)
                .map_err(|e| Error::config(format!("corrupt manifest: {e}")))?,
            status: PageStatus::parse(&status).ok_or_else(|| Error::config(format!("corrupt page status `{status}`")))?,
        });
    }
    Ok(())
}

pub fn load_project(conn: &Connection, id: &ProjectId) -> Result<Project> {
    let project = conn
        .query_row(
            &format!("SELECT {PROJECT_COLUMNS} FROM projects WHERE id = ?1"),
            [id.as_str()],
            project_from_row,
        )
        .optional()?;
    let mut project = project.ok_or_else(|| Error::not_found(format!("project `{id}`")))?;
    load_pages(conn, &mut project)?;
    Ok(project)
}

/// Looks a project up by id, falling back to a case-insensitive name match.
pub fn find_project(conn: &Connection, id_or_name: &str) -> Result<Option<Project>> {
    let project = conn
        .query_row(
            &format!("SELECT {PROJECT_COLUMNS} FROM projects WHERE id = ?1 OR name_key = ?2 ORDER BY id = ?1 DESC LIMIT 1"),
            params![id_or_name, page_name_key(id_or_name)],
            project_from_row,
        )
        .optional()?;
    match project {
        Some(mut p) => {
            load_pages(conn, &mut p)?;
            Ok(Some(p))
        }
        None => Ok(None),
    }
}

pub fn list_projects(conn: &Connection) -> Result<Vec<Project>> {
    let mut stmt = conn.prepare(&format!("SELECT {PROJECT_COLUMNS} FROM projects ORDER BY created_at, id"))?;
    let mut out = stmt.query_map([], project_from_row)?.collect::<rusqlite::Result<Vec<_>>>()?;
    for p in &mut out {
        load_pages(conn, p)?;
    }
    Ok(out)
}
