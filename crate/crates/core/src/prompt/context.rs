use std::collections::BTreeSet;

use crate::catalog::StackProfile;
use crate::model::{Page, Workspace};
use crate::path::RelPath;

/// Files embedded in a prompt about `page`: the page's own files plus the
/// profile's shared files, restricted to what exists in HEAD, sorted.
///
/// Manifest entries that no longer exist (for example after a rollback) are
/// dropped silently.
pub fn select_context_files(profile: &StackProfile, page: Option<&Page>, head: &Workspace) -> Vec<RelPath> {
    let mut out: BTreeSet<RelPath> = BTreeSet::new();
    if let Some(page) = page {
        out.extend(page.file_manifest.iter().filter(|p| head.contains(p)).cloned());
    }
    out.extend(profile.shared_context_paths.iter().filter(|p| head.contains(p)).cloned());
    out.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Catalog, DEFAULT_PROFILE};
    use crate::model::{FileEntry, PageId};

    fn p(s: &str) -> RelPath {
        RelPath::parse(s).unwrap()
    }

    #[test]
    fn manifest_plus_shared_and_dangling_paths_dropped() {
        let cat = Catalog::builtin().unwrap();
        let profile = cat.profile(DEFAULT_PROFILE).unwrap();
        let mut head = profile.scaffold_workspace();
        head.insert(FileEntry::new(p("client/src/views/QuestionsView.vue"), "<template/>"));
        let mut page = Page::new(PageId::from("pg_1"), "Questions", "list").unwrap();
        page.file_manifest.insert(p("client/src/views/QuestionsView.vue"));
        page.file_manifest.insert(p("server/src/routes/questions.ts"));

        let got = select_context_files(profile, Some(&page), &head);
        // Oracle: manual intersection with HEAD, then the shared files.
        let mut expected: Vec<RelPath> = vec![p("client/src/views/QuestionsView.vue")];
        for s in &profile.shared_context_paths {
            if head.contains(s) {
                expected.push(s.clone());
            }
        }
        expected.sort();
        assert_eq!(got, expected);
        assert!(!got.contains(&p("server/src/routes/questions.ts")));

        let pending = Page::new(PageId::from("pg_2"), "Answers", "answers").unwrap();
        let shared = select_context_files(profile, Some(&pending), &head);
        assert_eq!(shared.len(), profile.shared_context_paths.len());
    }
}
