use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::model::{FileEntry, Workspace};
use crate::path::RelPath;

/// Content-addressed object directory: `objects/<first-2-hex>/<digest>`.
///
/// Blobs and tree objects share the namespace; a tree object is the sorted
/// `<digest> <path>` listing produced by [`Workspace::tree_object`], so its
/// digest is the workspace tree digest.
#[derive(Debug, Clone)]
pub struct ObjectStore {
    root: PathBuf,
}

impl ObjectStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(ObjectStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn location(&self, digest: &Digest) -> PathBuf {
        let hex = digest.to_hex();
        self.root.join(&hex[..2]).join(hex)
    }

    pub fn contains(&self, digest: &Digest) -> bool {
        self.location(digest).is_file()
    }

    /// Stores `bytes` unless an object with the same digest exists.
    pub fn put(&self, bytes: &[u8]) -> Result<Digest> {
        let digest = Digest::of(bytes);
        let target = self.location(&digest);
        if target.is_file() {
            return Ok(digest);
        }
        let dir = target.parent().expect("object path has a parent");
        fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.tmp-{}", digest.to_hex(), std::process::id()));
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &target)?;
        Ok(digest)
    }

    /// Reads an object and checks it against its name.
    pub fn get(&self, digest: &Digest) -> Result<Vec<u8>> {
        let bytes = fs::read(self.location(digest)).map_err(|e| {
            if e.kind() == io::ErrorKind::NotFound {
                Error::not_found(format!("object {digest}"))
            } else {
                Error::Io(e)
            }
        })?;
        if Digest::of(&bytes) != *digest {
            return Err(Error::Io(io::Error::other(format!("object {digest} is corrupt"))));
        }
        Ok(bytes)
    }

    /// Stores every blob and the tree object; returns the tree digest.
    pub fn put_tree(&self, workspace: &Workspace) -> Result<Digest> {
        for entry in workspace.entries() {
            self.put(&entry.content)?;
        }
        self.put(&workspace.tree_object())
    }

    pub fn load_tree(&self, tree: &Digest) -> Result<Workspace> {
        let listing = self.get(tree)?;
        let listing = String::from_utf8(listing).map_err(|_| Error::config(format!("tree {tree} is not UTF-8")))?;
        let mut ws = Workspace::new();
        for line in listing.lines() {
            let (hex, path) = line
                .split_once(' ')
                .ok_or_else(|| Error::config(format!("tree {tree}: bad line `{line}`")))?;
            let digest: Digest = hex.parse().map_err(|e| Error::config(format!("tree {tree}: {e}")))?;
            let path = RelPath::parse(path).map_err(|r| Error::config(format!("tree {tree}: {r}")))?;
            ws.insert(FileEntry::new(path, self.get(&digest)?));
        }
        if ws.tree_digest() != *tree {
            return Err(Error::Io(io::Error::other(format!("tree {tree} does not reproduce its digest"))));
        }
        Ok(ws)
    }

    /// Number of stored objects (blobs and trees).
    pub fn object_count(&self) -> Result<usize> {
        let mut n = 0;
        for shard in fs::read_dir(&self.root)? {
            let shard = shard?;
            if shard.file_type()?.is_dir() {
                for obj in fs::read_dir(shard.path())? {
                    let name = obj?.file_name();
                    if !name.to_string_lossy().starts_with('.') {
                        n += 1;
                    }
                }
            }
        }
        Ok(n)
    }
}
