use globset::{Glob, GlobSet, GlobSetBuilder};

use crate::error::{Error, Result};
use crate::path::RelPath;

/// Paths excluded from projection and snapshots (dependency installs, build
/// output, local databases).
#[derive(Debug, Clone)]
pub struct IgnoreRules {
    patterns: Vec<String>,
    set: GlobSet,
}

impl IgnoreRules {
    pub fn new<S: AsRef<str>>(patterns: &[S]) -> Result<Self> {
        let mut builder = GlobSetBuilder::new();
        for p in patterns {
            let glob = Glob::new(p.as_ref()).map_err(|e| Error::config(format!("ignore glob `{}`: {e}", p.as_ref())))?;
            builder.add(glob);
        }
        let set = builder
            .build()
            .map_err(|e| Error::config(format!("ignore globs: {e}")))?;
        Ok(IgnoreRules {
            patterns: patterns.iter().map(|p| p.as_ref().to_string()).collect(),
            set,
        })
    }

    pub fn none() -> Self {
        IgnoreRules::new::<&str>(&[]).expect("empty glob set")
    }

    pub fn patterns(&self) -> &[String] {
        &self.patterns
    }

    pub fn is_ignored(&self, path: &RelPath) -> bool {
        self.set.is_match(path.as_str())
    }

    /// True when everything below `dir` is ignored, so a walk can skip it.
    pub fn is_ignored_dir(&self, dir: &str) -> bool {
        self.set.is_match(dir) || self.set.is_match(format!("{dir}/.probe"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_nested_dependency_dirs() {
        let rules = IgnoreRules::new(&["**/node_modules/**", "**/*.sqlite"]).unwrap();
        assert!(rules.is_ignored(&RelPath::parse("client/node_modules/vue/index.js").unwrap()));
        assert!(rules.is_ignored(&RelPath::parse("server/data/app.sqlite").unwrap()));
        assert!(!rules.is_ignored(&RelPath::parse("client/src/App.vue").unwrap()));
        assert!(rules.is_ignored_dir("client/node_modules"));
        assert!(!rules.is_ignored_dir("client/src"));
    }
}
