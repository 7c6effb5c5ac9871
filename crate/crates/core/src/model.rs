//! User-facing entities: projects, pages, files and workspaces.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::clock::{Clock, IdSource, Timestamp};
use crate::digest::{Digest, Hasher};
use crate::error::{Error, Result};
use crate::path::RelPath;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn generate(ids: &dyn IdSource) -> Self {
                $name(ids.next_id($prefix))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

id_type!(ProjectId, "prj");
id_type!(PageId, "pg");
id_type!(SnapshotId, "snap");
id_type!(RequestId, "req");
id_type!(ResponseId, "rsp");
id_type!(JobId, "job");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PageStatus {
    Pending,
    Generated,
    Failed,
}

impl PageStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            PageStatus::Pending => "pending",
            PageStatus::Generated => "generated",
            PageStatus::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(PageStatus::Pending),
            "generated" => Some(PageStatus::Generated),
            "failed" => Some(PageStatus::Failed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub id: PageId,
    pub name: String,
    pub description: String,
    pub file_manifest: BTreeSet<RelPath>,
    pub status: PageStatus,
}

impl Page {
    pub fn new(id: PageId, name: &str, description: &str) -> Result<Self> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::validation("page name must not be empty"));
        }
        Ok(Page {
            id,
            name: name.to_string(),
            description: description.to_string(),
            file_manifest: BTreeSet::new(),
            status: PageStatus::Pending,
        })
    }

    pub fn name_key(&self) -> String {
        page_name_key(&self.name)
    }

    pub fn is_generated(&self) -> bool {
        self.status == PageStatus::Generated
    }
}

/// Case-insensitive page addressing key.
pub fn page_name_key(name: &str) -> String {
    name.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Project {
    pub id: ProjectId,
    pub name: String,
    pub context_description: String,
    pub created_at: Timestamp,
    pub pages: Vec<Page>,
    pub head_snapshot: Option<SnapshotId>,
    pub stack_profile_id: String,
}

impl Project {
    /// Builds a validated, page-less project. Name uniqueness and profile
    /// registration are checked by the caller against the store and catalog.
    pub fn new(
        name: &str,
        context_description: &str,
        stack_profile_id: &str,
        ids: &dyn IdSource,
        clock: &dyn Clock,
    ) -> Result<Self> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::validation("project name must not be empty"));
        }
        Ok(Project {
            id: ProjectId::generate(ids),
            name: name.to_string(),
            context_description: context_description.trim().to_string(),
            created_at: clock.now(),
            pages: Vec::new(),
            head_snapshot: None,
            stack_profile_id: stack_profile_id.to_string(),
        })
    }

    pub fn page(&self, id: &PageId) -> Option<&Page> {
        self.pages.iter().find(|p| &p.id == id)
    }

    pub fn page_by_name(&self, name: &str) -> Option<&Page> {
        let key = page_name_key(name);
        self.pages.iter().find(|p| p.name_key() == key)
    }

    /// Appends a pending page, enforcing case-insensitive name uniqueness.
    pub fn add_page(&mut self, id: PageId, name: &str, description: &str) -> Result<&Page> {
        let page = Page::new(id, name, description)?;
        if self.page_by_name(&page.name).is_some() {
            return Err(Error::conflict(format!(
                "page `{}` already exists in project `{}`",
                page.name, self.name
            )));
        }
        self.pages.push(page);
        Ok(self.pages.last().expect("just pushed"))
    }
}

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: RelPath,
    #[serde(with = "bytes_as_text")]
    pub content: Vec<u8>,
    pub digest: Digest,
}

impl FileEntry {
    pub fn new(path: RelPath, content: impl Into<Vec<u8>>) -> Self {
        let content = content.into();
        let digest = Digest::of(&content);
        FileEntry { path, content, digest }
    }

    pub fn content_str(&self) -> Option<&str> {
        std::str::from_utf8(&self.content).ok()
    }
}

impl fmt::Debug for FileEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FileEntry")
            .field("path", &self.path)
            .field("len", &self.content.len())
            .field("digest", &self.digest)
            .finish()
    }
}

mod bytes_as_text {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        Ok(String::deserialize(d)?.into_bytes())
    }
}

/// The serialized form hashed into a tree digest and stored as a tree object:
/// one `<hex digest> <path>\n` line per file, sorted by path.
pub fn tree_object_bytes<'a>(entries: impl IntoIterator<Item = (&'a RelPath, &'a Digest)>) -> Vec<u8> {
    let mut pairs: Vec<_> = entries.into_iter().collect();
    pairs.sort_by(|a, b| a.0.cmp(b.0));
    let mut out = Vec::new();
    for (path, digest) in pairs {
        out.extend_from_slice(digest.to_hex().as_bytes());
        out.push(b' ');
        out.extend_from_slice(path.as_str().as_bytes());
        out.push(b'\n');
    }
    out
}

/// Digest of a tree with no files.
pub fn empty_tree_digest() -> Digest {
    Digest::of(b"")
}

/// A project file tree held in memory.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Workspace {
    files: BTreeMap<RelPath, FileEntry>,
}

impl Workspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = FileEntry>) -> Self {
        let mut ws = Workspace::new();
        for e in entries {
            ws.insert(e);
        }
        ws
    }

    pub fn insert(&mut self, entry: FileEntry) -> Option<FileEntry> {
        self.files.insert(entry.path.clone(), entry)
    }

    pub fn remove(&mut self, path: &RelPath) -> Option<FileEntry> {
        self.files.remove(path)
    }

    pub fn get(&self, path: &RelPath) -> Option<&FileEntry> {
        self.files.get(path)
    }

    pub fn contains(&self, path: &RelPath) -> bool {
        self.files.contains_key(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &RelPath> {
        self.files.keys()
    }

    pub fn entries(&self) -> impl Iterator<Item = &FileEntry> {
        self.files.values()
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn tree_object(&self) -> Vec<u8> {
        tree_object_bytes(self.files.values().map(|e| (&e.path, &e.digest)))
    }

    pub fn tree_digest(&self) -> Digest {
        workspace_tree_digest(self)
    }
}

pub fn workspace_tree_digest(workspace: &Workspace) -> Digest {
    let mut h = Hasher::new();
    h.update(workspace.tree_object());
    h.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{LogicalClock, SequentialIds};
    use proptest::prelude::*;

    fn p(s: &str) -> RelPath {
        RelPath::parse(s).unwrap()
    }

    #[test]
    fn new_project_rejects_blank_name() {
        let (ids, clock) = (SequentialIds::default(), LogicalClock::default());
        let err = Project::new("   ", "anything", "vue-express", &ids, &clock).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Validation);
        let prj = Project::new("ForumApp", "a simple question and answer forum", "vue-express", &ids, &clock).unwrap();
        assert!(prj.pages.is_empty());
        assert!(prj.head_snapshot.is_none());
    }

    #[test]
    fn page_names_are_case_insensitive() {
        let (ids, clock) = (SequentialIds::default(), LogicalClock::default());
        let mut prj = Project::new("ForumApp", "", "vue-express", &ids, &clock).unwrap();
        let page = prj
            .add_page(
                PageId::generate(&ids),
                "Question Submission",
                "I would like to be able to submit questions on this page.",
            )
            .unwrap();
        assert_eq!(page.status, PageStatus::Pending);
        assert!(page.file_manifest.is_empty());
        let err = prj.add_page(PageId::generate(&ids), "question submission", "x").unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Conflict);
        prj.add_page(PageId::generate(&ids), "Answers", "register an answer to a question").unwrap();
        let names: Vec<_> = prj.pages.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["Question Submission", "Answers"]);
    }

    #[test]
    fn empty_tree_digest_is_sha256_of_nothing() {
        assert_eq!(
            Workspace::new().tree_digest().to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(Workspace::new().tree_digest(), empty_tree_digest());
    }

    #[test]
    fn digest_is_deterministic() {
        let ws = Workspace::from_entries([FileEntry::new(p("a.txt"), "x")]);
        assert_eq!(ws.tree_digest(), ws.clone().tree_digest());
        assert_ne!(ws.tree_digest(), empty_tree_digest());
    }

    #[test]
    fn file_digest_tracks_content() {
        let e = FileEntry::new(p("a.txt"), "x");
        assert_eq!(e.digest, Digest::of(b"x"));
    }

    // Independent route: sort (path, content-hash) pairs by hand and hash
    // the textual lines directly.
    fn sort_then_hash(files: &[(String, Vec<u8>)]) -> Digest {
        let mut last: BTreeMap<String, Vec<u8>> = BTreeMap::new();
        for (path, content) in files {
            last.insert(path.clone(), content.clone());
        }
        let mut lines: Vec<String> = last
            .iter()
            .map(|(path, content)| {
                use sha2::Digest as _;
                format!("{} {}\n", hex::encode(sha2::Sha256::digest(content)), path)
            })
            .collect();
        lines.sort_by(|a, b| a.split_once(' ').unwrap().1.cmp(b.split_once(' ').unwrap().1));
        Digest::of(lines.concat().as_bytes())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn tree_digest_ignores_insertion_order(
            files in proptest::collection::vec(("[a-c]{1,3}(/[a-c]{1,3}){0,2}", proptest::collection::vec(any::<u8>(), 0..16)), 0..12),
            seed in any::<u64>(),
        ) {
            let forward = Workspace::from_entries(files.iter().map(|(path, c)| FileEntry::new(p(path), c.clone())));
            // Keep last-wins semantics per path, then insert in a shuffled order.
            let mut dedup: BTreeMap<String, Vec<u8>> = BTreeMap::new();
            for (path, c) in &files { dedup.insert(path.clone(), c.clone()); }
            let mut shuffled: Vec<_> = dedup.into_iter().collect();
            let n = shuffled.len().max(1);
            shuffled.rotate_left((seed as usize) % n);
            if seed % 2 == 0 { shuffled.reverse(); }
            let backward = Workspace::from_entries(shuffled.iter().map(|(path, c)| FileEntry::new(p(path), c.clone())));
            prop_assert_eq!(forward.tree_digest(), backward.tree_digest());
            prop_assert_eq!(forward.tree_digest(), sort_then_hash(&files));
        }
    }
}
