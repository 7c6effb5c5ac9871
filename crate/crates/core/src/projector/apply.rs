use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::ignore::IgnoreRules;
use crate::model::{FileEntry, Page, Workspace};
use crate::path::RelPath;
use crate::projector::fs::FileSink;
use crate::projector::protocol::{parse_response, FileBlock, ParseWarning};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedFile {
    pub path: RelPath,
    pub digest: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionResult {
    pub applied: Vec<AppliedFile>,
    pub narrative: String,
    pub rejected: Vec<RejectedFile>,
    pub warnings: Vec<ParseWarning>,
}

impl ProjectionResult {
    /// Nothing was written; the caller must not take a snapshot.
    pub fn is_empty_projection(&self) -> bool {
        self.applied.is_empty()
    }

    pub fn applied_paths(&self) -> impl Iterator<Item = &RelPath> {
        self.applied.iter().map(|a| &a.path)
    }
}

fn reject(path: &str, reason: impl ToString) -> RejectedFile {
    RejectedFile {
        path: path.to_string(),
        reason: reason.to_string(),
    }
}

/// Checks that `path` can coexist with the other files: no file may sit
/// where another path needs a directory.
fn shape_conflict(path: &RelPath, files: &BTreeMap<RelPath, Vec<u8>>, ws: &Workspace) -> bool {
    let s = path.as_str();
    let mut prefix = String::new();
    for seg in path.segments() {
        if !prefix.is_empty() {
            if let Ok(parent) = RelPath::parse(&prefix) {
                if files.contains_key(&parent) || ws.contains(&parent) {
                    return true;
                }
            }
            prefix.push('/');
        }
        prefix.push_str(seg);
    }
    let dir = format!("{s}/");
    files.keys().chain(ws.paths()).any(|p| p.as_str().starts_with(&dir))
}

/// Writes every block with a safe path into `sink` and `workspace`.
///
/// Either every accepted file is written or none is: on a sink failure the
/// files already written are restored to their previous contents and the
/// in-memory workspace is left untouched. Re-emitted files replace the old
/// content wholesale. The page manifest grows by the applied paths.
pub fn apply_projection(
    workspace: &mut Workspace,
    blocks: &[FileBlock],
    page: &mut Page,
    sink: &mut dyn FileSink,
    ignore: &IgnoreRules,
) -> Result<ProjectionResult> {
    let mut result = ProjectionResult::default();
    let mut staged: BTreeMap<RelPath, Vec<u8>> = BTreeMap::new();
    let mut order: Vec<RelPath> = Vec::new();

    for block in blocks {
        let path = match RelPath::parse(&block.path) {
            Ok(p) => p,
            Err(reason) => {
                result.rejected.push(reject(&block.path, reason));
                continue;
            }
        };
        if ignore.is_ignored(&path) {
            result.rejected.push(reject(&block.path, "ignored-path"));
            continue;
        }
        let mut others = staged.clone();
        others.remove(&path);
        let mut ws_view = workspace.clone();
        ws_view.remove(&path);
        if shape_conflict(&path, &others, &ws_view) {
            result.rejected.push(reject(&block.path, "file-directory-conflict"));
            continue;
        }
        if !staged.contains_key(&path) {
            order.push(path.clone());
        }
        staged.insert(path, block.content.clone().into_bytes());
    }

    let mut written: Vec<&RelPath> = Vec::new();
    for path in &order {
        if let Err(err) = sink.write(path, &staged[path]) {
            for done in written.into_iter().rev() {
                let _ = match workspace.get(done) {
                    Some(old) => sink.write(done, &old.content),
                    None => sink.remove(done),
                };
            }
            return Err(Error::Io(err));
        }
        written.push(path);
    }

    for path in order {
        let entry = FileEntry::new(path.clone(), staged.remove(&path).expect("staged"));
        result.applied.push(AppliedFile {
            path: path.clone(),
            digest: entry.digest,
        });
        workspace.insert(entry);
        page.file_manifest.insert(path);
    }
    Ok(result)
}

/// Parses a raw model response and applies its file blocks.
pub fn project_response(
    workspace: &mut Workspace,
    response_text: &str,
    page: &mut Page,
    sink: &mut dyn FileSink,
    ignore: &IgnoreRules,
) -> Result<ProjectionResult> {
    let parsed = parse_response(response_text);
    let mut result = apply_projection(workspace, &parsed.blocks, page, sink, ignore)?;
    result.narrative = parsed.narrative;
    result.warnings = parsed.warnings;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PageId;
    use crate::projector::fs::{scan_dir, DiskSink, NullSink};
    use std::io;

    fn page() -> Page {
        Page::new(PageId::from("pg_1"), "Questions", "list questions").unwrap()
    }

    #[test]
    fn applies_safe_blocks_and_grows_manifest() {
        let mut ws = Workspace::new();
        let mut pg = page();
        let blocks = [
            FileBlock::new("client/src/views/Questions.vue", "<template/>"),
            FileBlock::new("server/src/routes/questions.ts", "export {}"),
        ];
        let res = apply_projection(&mut ws, &blocks, &mut pg, &mut NullSink, &IgnoreRules::none()).unwrap();
        assert_eq!(res.applied.len(), 2);
        assert_eq!(pg.file_manifest.len(), 2);
        assert_eq!(ws.len(), 2);
    }

    #[test]
    fn rejects_traversal_and_absolute_paths() {
        let mut ws = Workspace::new();
        let mut pg = page();
        let blocks = [
            FileBlock::new("../../etc/passwd", "root"),
            FileBlock::new("/etc/passwd", "root"),
            FileBlock::new("ok.txt", "fine"),
        ];
        let res = apply_projection(&mut ws, &blocks, &mut pg, &mut NullSink, &IgnoreRules::none()).unwrap();
        assert_eq!(res.rejected[0].reason, "parent-segment");
        assert_eq!(res.rejected[1].reason, "absolute-path");
        assert_eq!(res.applied.len(), 1);
    }

    #[test]
    fn overwrite_replaces_whole_file_and_last_duplicate_wins() {
        let mut ws = Workspace::new();
        let mut pg = page();
        let rules = IgnoreRules::none();
        apply_projection(&mut ws, &[FileBlock::new("a.txt", "old")], &mut pg, &mut NullSink, &rules).unwrap();
        let res = apply_projection(
            &mut ws,
            &[FileBlock::new("a.txt", "new1"), FileBlock::new("./a.txt", "new2")],
            &mut pg,
            &mut NullSink,
            &rules,
        )
        .unwrap();
        assert_eq!(res.applied.len(), 1);
        assert_eq!(ws.get(&RelPath::parse("a.txt").unwrap()).unwrap().content, b"new2");
    }

    #[test]
    fn file_directory_conflicts_are_rejected() {
        let mut ws = Workspace::new();
        let mut pg = page();
        let rules = IgnoreRules::none();
        apply_projection(&mut ws, &[FileBlock::new("a/b.txt", "x")], &mut pg, &mut NullSink, &rules).unwrap();
        let res = apply_projection(&mut ws, &[FileBlock::new("a", "y"), FileBlock::new("a/b.txt/c", "z")], &mut pg, &mut NullSink, &rules).unwrap();
        assert!(res.applied.is_empty());
        assert!(res.rejected.iter().all(|r| r.reason == "file-directory-conflict"));
    }

    #[test]
    fn ignored_paths_are_rejected() {
        let mut ws = Workspace::new();
        let mut pg = page();
        let rules = IgnoreRules::new(&["**/node_modules/**"]).unwrap();
        let res = apply_projection(&mut ws, &[FileBlock::new("client/node_modules/x.js", "x")], &mut pg, &mut NullSink, &rules).unwrap();
        assert!(res.is_empty_projection());
        assert_eq!(res.rejected[0].reason, "ignored-path");
    }

    struct FailAt {
        inner: DiskSink,
        writes: usize,
        fail_at: usize,
    }

    impl FileSink for FailAt {
        fn write(&mut self, path: &RelPath, content: &[u8]) -> io::Result<()> {
            self.writes += 1;
            if self.writes == self.fail_at {
                return Err(io::Error::other("injected failure"));
            }
            self.inner.write(path, content)
        }
        fn remove(&mut self, path: &RelPath) -> io::Result<()> {
            self.inner.remove(path)
        }
    }

    #[test]
    fn io_failure_leaves_disk_and_memory_unchanged() {
        let rules = IgnoreRules::none();
        for n in 1..=4 {
            for k in 1..=n {
                let dir = tempfile::tempdir().unwrap();
                let mut ws = Workspace::new();
                let mut pg = page();
                let mut disk = DiskSink::new(dir.path()).unwrap();
                apply_projection(&mut ws, &[FileBlock::new("f0.txt", "orig"), FileBlock::new("f2.txt", "orig2")], &mut pg, &mut disk, &rules).unwrap();
                let before_mem = ws.tree_digest();
                let before_disk = scan_dir(dir.path(), &rules).unwrap().tree_digest();
                assert_eq!(before_mem, before_disk);

                let blocks: Vec<_> = (0..n).map(|i| FileBlock::new(format!("f{i}.txt"), format!("new{i}"))).collect();
                let mut failing = FailAt { inner: disk, writes: 0, fail_at: k };
                let manifest_before = pg.file_manifest.clone();
                let err = apply_projection(&mut ws, &blocks, &mut pg, &mut failing, &rules).unwrap_err();
                assert_eq!(err.kind(), crate::ErrorKind::Io);
                assert_eq!(ws.tree_digest(), before_mem, "n={n} k={k}");
                assert_eq!(scan_dir(dir.path(), &rules).unwrap().tree_digest(), before_disk, "n={n} k={k}");
                assert_eq!(pg.file_manifest, manifest_before);
            }
        }
    }

    #[test]
    fn project_response_keeps_narrative() {
        let mut ws = Workspace::new();
        let mut pg = page();
        let res = project_response(&mut ws, "Only words here.", &mut pg, &mut NullSink, &IgnoreRules::none()).unwrap();
        assert!(res.is_empty_projection());
        assert_eq!(res.narrative, "Only words here.");
    }
}
