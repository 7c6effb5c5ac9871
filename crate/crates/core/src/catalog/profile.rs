use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::ignore::IgnoreRules;
use crate::model::{FileEntry, Workspace};
use crate::path::RelPath;
use crate::projector::FileBlock;

/// argv + working directory + extra environment. `{frontend_port}`,
/// `{backend_port}` and `{workspace}` in argv and env values are expanded
/// at launch time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandSpec {
    pub argv: Vec<String>,
    #[serde(default)]
    pub cwd: Option<RelPath>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

impl CommandSpec {
    pub fn expand(&self, vars: &[(&str, String)]) -> CommandSpec {
        let sub = |s: &String| {
            let mut out = s.clone();
            for (k, v) in vars {
                out = out.replace(&format!("{{{k}}}"), v);
            }
            out
        };
        CommandSpec {
            argv: self.argv.iter().map(sub).collect(),
            cwd: self.cwd.clone(),
            env: self.env.iter().map(|(k, v)| (k.clone(), sub(v))).collect(),
        }
    }

    pub fn display(&self) -> String {
        self.argv.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerSpec {
    #[serde(flatten)]
    pub command: CommandSpec,
    /// HTTP path probed for readiness on the server's port.
    #[serde(default = "default_probe_path")]
    pub probe_path: String,
}

fn default_probe_path() -> String {
    "/".to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCommands {
    pub frontend: ServerSpec,
    pub backend: ServerSpec,
}

/// A built-in, pre-tested page applied without a model call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredefinedFeature {
    pub id: String,
    pub page_name: String,
    pub description: String,
    pub canned_projection: Vec<FileEntry>,
}

impl PredefinedFeature {
    pub fn blocks(&self) -> Vec<FileBlock> {
        self.canned_projection
            .iter()
            .map(|e| FileBlock::new(e.path.as_str(), String::from_utf8_lossy(&e.content)))
            .collect()
    }

    pub fn manifest(&self) -> Vec<RelPath> {
        self.canned_projection.iter().map(|e| e.path.clone()).collect()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileFile {
    id: String,
    name: String,
    directives: String,
    #[serde(default)]
    shared_context_paths: Vec<RelPath>,
    #[serde(default)]
    ignore_globs: Vec<String>,
    #[serde(default)]
    install: Vec<CommandSpec>,
    frontend: ServerSpec,
    backend: ServerSpec,
    #[serde(default)]
    features: Vec<FeatureDecl>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureDecl {
    id: String,
    page_name: String,
    description: String,
    manifest: Vec<RelPath>,
}

/// Template data describing the generated application's stack.
#[derive(Debug, Clone)]
pub struct StackProfile {
    pub id: String,
    pub name: String,
    /// Technology and architecture directives placed in every system preamble.
    pub directives: String,
    pub scaffold_tree: Vec<FileEntry>,
    pub shared_context_paths: Vec<RelPath>,
    pub install_commands: Vec<CommandSpec>,
    pub run_commands: RunCommands,
    pub ignore: IgnoreRules,
    pub predefined_features: Vec<PredefinedFeature>,
}

impl StackProfile {
    /// Builds a profile from the files of one profile directory:
    /// `profile.toml`, `scaffold/**` and `features/<id>/**`.
    pub fn from_files(files: &BTreeMap<String, Vec<u8>>) -> Result<Self> {
        let manifest = files
            .get("profile.toml")
            .ok_or_else(|| Error::config("profile directory has no profile.toml"))?;
        let manifest = std::str::from_utf8(manifest).map_err(|_| Error::config("profile.toml is not UTF-8"))?;
        let decl: ProfileFile = toml::from_str(manifest).map_err(|e| Error::config(format!("profile.toml: {e}")))?;

        let collect = |prefix: &str| -> Result<Vec<FileEntry>> {
            files
                .iter()
                .filter_map(|(name, bytes)| name.strip_prefix(prefix).map(|rest| (rest, bytes)))
                .map(|(rest, bytes)| {
                    let path = RelPath::parse(rest)
                        .map_err(|r| Error::config(format!("profile `{}`: file `{rest}`: {r}", decl.id)))?;
                    Ok(FileEntry::new(path, bytes.clone()))
                })
                .collect()
        };

        let scaffold_tree = collect("scaffold/")?;
        if scaffold_tree.is_empty() {
            return Err(Error::config(format!("profile `{}` has an empty scaffold", decl.id)));
        }
        let mut predefined_features = Vec::new();
        for f in decl.features {
            let canned = collect(&format!("features/{}/", f.id))?;
            let mut declared: Vec<_> = f.manifest.clone();
            declared.sort();
            let mut shipped: Vec<_> = canned.iter().map(|e| e.path.clone()).collect();
            shipped.sort();
            if canned.is_empty() || declared != shipped {
                return Err(Error::config(format!(
                    "profile `{}` feature `{}`: declared manifest {declared:?} does not match shipped files {shipped:?}",
                    decl.id, f.id
                )));
            }
            predefined_features.push(PredefinedFeature {
                id: f.id,
                page_name: f.page_name,
                description: f.description,
                canned_projection: canned,
            });
        }
        let ignore = IgnoreRules::new(&decl.ignore_globs)?;
        for e in &scaffold_tree {
            if ignore.is_ignored(&e.path) {
                return Err(Error::config(format!("profile `{}`: scaffold file {} is ignored", decl.id, e.path)));
            }
        }

        Ok(StackProfile {
            id: decl.id,
            name: decl.name,
            directives: decl.directives.trim_end().to_string(),
            scaffold_tree,
            shared_context_paths: decl.shared_context_paths,
            install_commands: decl.install,
            run_commands: RunCommands {
                frontend: decl.frontend,
                backend: decl.backend,
            },
            ignore,
            predefined_features,
        })
    }

    pub fn scaffold_workspace(&self) -> Workspace {
        Workspace::from_entries(self.scaffold_tree.iter().cloned())
    }

    pub fn scaffold_digest(&self) -> Digest {
        self.scaffold_workspace().tree_digest()
    }

    pub fn feature(&self, id: &str) -> Option<&PredefinedFeature> {
        self.predefined_features.iter().find(|f| f.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expand_substitutes_ports() {
        let spec = CommandSpec {
            argv: vec!["serve".into(), "--port".into(), "{frontend_port}".into()],
            cwd: None,
            env: [("API".to_string(), "http://127.0.0.1:{backend_port}".to_string())].into(),
        };
        let e = spec.expand(&[("frontend_port", "4300".into()), ("backend_port", "4301".into())]);
        assert_eq!(e.argv[2], "4300");
        assert_eq!(e.env["API"], "http://127.0.0.1:4301");
    }
}
