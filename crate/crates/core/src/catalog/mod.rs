//! Prompt templates and stack profiles, loaded from data files.
//!
//! The crate ships a builtin copy under `assets/`; operators can point the
//! service at their own directories with the same layout to edit templates
//! or profiles without rebuilding:
//!
//! ```text
//! templates/<id>.tmpl
//! profiles/<profile-id>/profile.toml
//! profiles/<profile-id>/scaffold/**
//! profiles/<profile-id>/features/<feature-id>/**
//! ```

mod profile;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use include_dir::{include_dir, Dir};

pub use profile::{CommandSpec, PredefinedFeature, RunCommands, ServerSpec, StackProfile};

use crate::error::{Error, Result};
use crate::prompt::TemplateSet;

static BUILTIN_ASSETS: Dir<'static> = include_dir!("$CARGO_MANIFEST_DIR/assets");

pub const DEFAULT_PROFILE: &str = "vue-express";
pub const TEST_PROFILE: &str = "static-test";

#[derive(Debug, Clone)]
pub struct Catalog {
    pub templates: TemplateSet,
    profiles: BTreeMap<String, StackProfile>,
}

impl Catalog {
    pub fn builtin() -> Result<Self> {
        let templates = embedded_files(BUILTIN_ASSETS.get_dir("templates"));
        let profiles = BUILTIN_ASSETS
            .get_dir("profiles")
            .map(|d| d.dirs().map(|p| embedded_files(Some(p))).collect())
            .unwrap_or_default();
        Self::from_parts(templates, profiles)
    }

    /// Loads from disk; a `None` directory falls back to the builtin copy.
    pub fn load(templates_dir: Option<&Path>, profiles_dir: Option<&Path>) -> Result<Self> {
        let templates = match templates_dir {
            Some(dir) => disk_files(dir)?,
            None => embedded_files(BUILTIN_ASSETS.get_dir("templates")),
        };
        let profiles = match profiles_dir {
            Some(dir) => {
                let mut out = Vec::new();
                let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
                entries.sort_by_key(|e| e.file_name());
                for entry in entries {
                    if entry.file_type()?.is_dir() {
                        out.push(disk_files(&entry.path())?);
                    }
                }
                out
            }
            None => BUILTIN_ASSETS
                .get_dir("profiles")
                .map(|d| d.dirs().map(|p| embedded_files(Some(p))).collect())
                .unwrap_or_default(),
        };
        Self::from_parts(templates, profiles)
    }

    fn from_parts(templates: BTreeMap<String, Vec<u8>>, profiles: Vec<BTreeMap<String, Vec<u8>>>) -> Result<Self> {
        let texts: Vec<(String, String)> = templates
            .into_iter()
            .filter(|(name, _)| name.ends_with(".tmpl"))
            .map(|(name, bytes)| {
                String::from_utf8(bytes)
                    .map(|t| (name.clone(), t))
                    .map_err(|_| Error::config(format!("template {name} is not UTF-8")))
            })
            .collect::<Result<_>>()?;
        let templates = TemplateSet::from_files(texts.iter().map(|(n, t)| (n.as_str(), t.as_str())))?;
        let mut map = BTreeMap::new();
        for files in profiles {
            let p = StackProfile::from_files(&files)?;
            if map.contains_key(&p.id) {
                return Err(Error::config(format!("duplicate profile id `{}`", p.id)));
            }
            map.insert(p.id.clone(), p);
        }
        if map.is_empty() {
            return Err(Error::config("no stack profiles registered"));
        }
        Ok(Catalog { templates, profiles: map })
    }

    pub fn profile(&self, id: &str) -> Result<&StackProfile> {
        self.profiles
            .get(id)
            .ok_or_else(|| Error::validation(format!("unknown stack profile `{id}`")))
    }

    /// Registers or replaces a profile.
    pub fn insert_profile(&mut self, profile: StackProfile) {
        self.profiles.insert(profile.id.clone(), profile);
    }

    pub fn has_profile(&self, id: &str) -> bool {
        self.profiles.contains_key(id)
    }

    pub fn profiles(&self) -> impl Iterator<Item = &StackProfile> {
        self.profiles.values()
    }
}

fn embedded_files(dir: Option<&Dir<'_>>) -> BTreeMap<String, Vec<u8>> {
    fn walk(dir: &Dir<'_>, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for f in dir.files() {
            if let Ok(rel) = f.path().strip_prefix(base) {
                out.insert(rel.to_string_lossy().replace('\\', "/"), f.contents().to_vec());
            }
        }
        for d in dir.dirs() {
            walk(d, base, out);
        }
    }
    let mut out = BTreeMap::new();
    if let Some(dir) = dir {
        walk(dir, dir.path(), &mut out);
    }
    out
}

fn disk_files(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            let path = entry.path();
            if entry.file_type()?.is_dir() {
                stack.push(path);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .map_err(|_| Error::config("walk escaped root"))?
                    .to_string_lossy()
                    .replace('\\', "/");
                out.insert(rel, fs::read(&path)?);
            }
        }
    }
    Ok(out)
}
