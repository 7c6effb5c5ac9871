//! Writing workspaces to disk.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::ignore::IgnoreRules;
use crate::model::{FileEntry, Workspace};
use crate::path::RelPath;

/// Destination for projected files.
pub trait FileSink {
    fn write(&mut self, path: &RelPath, content: &[u8]) -> io::Result<()>;
    fn remove(&mut self, path: &RelPath) -> io::Result<()>;
}

/// Discards writes; for callers that only track the in-memory tree.
#[derive(Debug, Default)]
pub struct NullSink;

impl FileSink for NullSink {
    fn write(&mut self, _: &RelPath, _: &[u8]) -> io::Result<()> {
        Ok(())
    }
    fn remove(&mut self, _: &RelPath) -> io::Result<()> {
        Ok(())
    }
}

/// Writes under a project directory. Refuses to follow symlinks or to
/// replace a directory with a file, so every write lands strictly inside
/// `root`.
#[derive(Debug, Clone)]
pub struct DiskSink {
    root: PathBuf,
}

impl DiskSink {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(DiskSink {
            root: root.canonicalize()?,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn prepare_parent(&self, path: &RelPath) -> io::Result<PathBuf> {
        let mut dir = self.root.clone();
        let segments: Vec<&str> = path.segments().collect();
        for seg in &segments[..segments.len() - 1] {
            dir.push(seg);
            match fs::symlink_metadata(&dir) {
                Ok(meta) if meta.file_type().is_dir() => {}
                Ok(_) => {
                    return Err(io::Error::new(
                        io::ErrorKind::AlreadyExists,
                        format!("{} is not a directory", dir.display()),
                    ))
                }
                Err(e) if e.kind() == io::ErrorKind::NotFound => fs::create_dir(&dir)?,
                Err(e) => return Err(e),
            }
        }
        Ok(dir)
    }
}

impl FileSink for DiskSink {
    fn write(&mut self, path: &RelPath, content: &[u8]) -> io::Result<()> {
        let dir = self.prepare_parent(path)?;
        let target = path.under(&self.root);
        debug_assert!(target.starts_with(&self.root));
        if let Ok(meta) = fs::symlink_metadata(&target) {
            if !meta.file_type().is_file() {
                return Err(io::Error::new(
                    io::ErrorKind::AlreadyExists,
                    format!("{} exists and is not a regular file", target.display()),
                ));
            }
        }
        let name = target.file_name().expect("non-empty path").to_string_lossy();
        let tmp = dir.join(format!(".{name}.nocode-tmp"));
        fs::write(&tmp, content)?;
        fs::rename(&tmp, &target).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })
    }

    fn remove(&mut self, path: &RelPath) -> io::Result<()> {
        let target = path.under(&self.root);
        match fs::symlink_metadata(&target) {
            Ok(meta) if meta.file_type().is_file() || meta.file_type().is_symlink() => {
                fs::remove_file(&target)?;
                prune_empty_dirs(&self.root, target.parent());
                Ok(())
            }
            Ok(_) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e),
        }
    }
}

fn prune_empty_dirs(root: &Path, mut dir: Option<&Path>) {
    while let Some(d) = dir {
        if d == root || !d.starts_with(root) || fs::remove_dir(d).is_err() {
            break;
        }
        dir = d.parent();
    }
}

/// Reads the non-ignored regular files below `root`. Symlinks and files
/// whose names are not valid workspace paths are skipped.
pub fn scan_dir(root: &Path, ignore: &IgnoreRules) -> Result<Workspace> {
    let mut ws = Workspace::new();
    if !root.exists() {
        return Ok(ws);
    }
    let mut stack = vec![(root.to_path_buf(), String::new())];
    while let Some((dir, rel)) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let Some(name) = entry.file_name().to_str().map(str::to_string) else {
                continue;
            };
            let rel_child = if rel.is_empty() { name.clone() } else { format!("{rel}/{name}") };
            let ft = entry.file_type()?;
            if ft.is_dir() {
                if !ignore.is_ignored_dir(&rel_child) {
                    stack.push((entry.path(), rel_child));
                }
            } else if ft.is_file() {
                if name.ends_with(".nocode-tmp") {
                    continue;
                }
                let Ok(path) = RelPath::parse(&rel_child) else { continue };
                if path.as_str() != rel_child || ignore.is_ignored(&path) {
                    continue;
                }
                ws.insert(FileEntry::new(path, fs::read(entry.path())?));
            }
        }
    }
    Ok(ws)
}

/// Makes the directory match `target` exactly (ignored paths untouched) and
/// verifies the result by rescanning.
pub fn materialize(root: &Path, target: &Workspace, ignore: &IgnoreRules) -> Result<Digest> {
    let mut sink = DiskSink::new(root)?;
    let current = scan_dir(sink.root(), ignore)?;
    for path in current.paths() {
        if !target.contains(path) {
            sink.remove(path)?;
        }
    }
    for entry in target.entries() {
        let unchanged = current.get(&entry.path).is_some_and(|e| e.digest == entry.digest);
        if !unchanged {
            sink.write(&entry.path, &entry.content)?;
        }
    }
    let digest = scan_dir(sink.root(), ignore)?.tree_digest();
    if digest != target.tree_digest() {
        return Err(Error::Io(io::Error::other(format!(
            "materialized tree {} does not match target {}",
            digest.short(),
            target.tree_digest().short()
        ))));
    }
    Ok(digest)
}
