use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, StackProfile};
use crate::error::{Error, Result};
use crate::model::{Page, PageId, Project, Workspace};
use crate::path::RelPath;
use crate::projector::{render_blocks, FileBlock, FILE_HEADER};
use crate::prompt::context::select_context_files;
use crate::prompt::{PromptKind, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub text: String,
}

impl Message {
    fn new(role: Role, text: impl Into<String>) -> Self {
        Message { role, text: text.into() }
    }
}

/// The message sequence for one model call.
///
/// Layout: one system message (preamble and task), an optional user message
/// carrying the injected source files, then the user's own text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposedPrompt {
    pub messages: Vec<Message>,
    pub kind: PromptKind,
    pub page_id: Option<PageId>,
    pub injected_paths: Vec<RelPath>,
}

impl ComposedPrompt {
    pub fn system_text(&self) -> &str {
        &self.messages[0].text
    }

    /// The final message, which carries the user's text.
    pub fn user_text(&self) -> &str {
        &self.messages.last().expect("at least two messages").text
    }
}

struct Parts<'a> {
    templates: &'a TemplateSet,
    profile: &'a StackProfile,
}

fn parts<'a>(catalog: &'a Catalog, project: &Project) -> Result<Parts<'a>> {
    let profile = catalog
        .profile(&project.stack_profile_id)
        .map_err(|_| Error::config(format!("project uses unknown stack profile `{}`", project.stack_profile_id)))?;
    Ok(Parts {
        templates: &catalog.templates,
        profile,
    })
}

impl Parts<'_> {
    fn preamble(&self, project: &Project) -> Result<String> {
        let context_section = if project.context_description.trim().is_empty() {
            String::new()
        } else {
            self.templates
                .render("context_section", &[("context_description", project.context_description.trim())])?
        };
        let text = self.templates.render(
            "system_preamble",
            &[
                ("profile_name", &self.profile.name),
                ("directives", &self.profile.directives),
                ("context_section", &context_section),
                ("protocol_header", FILE_HEADER),
            ],
        )?;
        Ok(text.trim_end().to_string())
    }

    fn assemble(
        &self,
        project: &Project,
        task: String,
        head: &Workspace,
        injected: Vec<RelPath>,
        user_text: String,
        kind: PromptKind,
        page_id: Option<PageId>,
    ) -> Result<ComposedPrompt> {
        let system = format!("{}\n\n{}", self.preamble(project)?, task.trim_end());
        let mut messages = vec![Message::new(Role::System, system)];
        if !injected.is_empty() {
            let blocks: Vec<FileBlock> = injected
                .iter()
                .map(|p| {
                    let entry = head.get(p).expect("injected paths come from HEAD");
                    FileBlock::new(p.as_str(), String::from_utf8_lossy(&entry.content))
                })
                .collect();
            let files = self.templates.render("context_files", &[("files", &render_blocks(&blocks))])?;
            messages.push(Message::new(Role::User, files.trim_end()));
        }
        messages.push(Message::new(Role::User, user_text));
        Ok(ComposedPrompt {
            messages,
            kind,
            page_id,
            injected_paths: injected,
        })
    }
}

fn member<'p>(project: &'p Project, page: &Page) -> Result<&'p Page> {
    project
        .page(&page.id)
        .ok_or_else(|| Error::validation(format!("page `{}` does not belong to project `{}`", page.name, project.name)))
}

fn require_text(text: &str) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::validation("prompt text must not be empty"));
    }
    Ok(())
}

fn require_generated(page: &Page) -> Result<()> {
    if !page.is_generated() {
        return Err(Error::contract(format!(
            "page `{}` is {}; create it before refining it",
            page.name,
            page.status.as_str()
        )));
    }
    Ok(())
}

/// The internal initial prompt: stack directives, project layout, output
/// protocol and the project's context description.
pub fn compose_system_preamble(catalog: &Catalog, project: &Project) -> Result<String> {
    parts(catalog, project)?.preamble(project)
}

/// First generation of a page. Shared files are injected only once another
/// page has been generated, so the new page can hook into existing routing.
pub fn compose_page_creation(catalog: &Catalog, project: &Project, page: &Page, head: &Workspace) -> Result<ComposedPrompt> {
    let parts = parts(catalog, project)?;
    let page = member(project, page)?;
    if page.is_generated() {
        return Err(Error::contract(format!(
            "page `{}` is already generated; refine it instead",
            page.name
        )));
    }
    if page.description.trim().is_empty() {
        return Err(Error::validation(format!("page `{}` has an empty description", page.name)));
    }
    let others: Vec<&str> = project
        .pages
        .iter()
        .filter(|p| p.id != page.id && p.is_generated())
        .map(|p| p.name.as_str())
        .collect();
    let existing = if others.is_empty() { "none".to_string() } else { others.join(", ") };
    let injected = if others.is_empty() {
        Vec::new()
    } else {
        select_context_files(parts.profile, None, head)
    };
    let task = parts
        .templates
        .render("task_page_creation", &[("page_name", &page.name), ("existing_pages", &existing)])?;
    let user = parts.templates.render(
        "user_page_creation",
        &[("page_name", &page.name), ("page_description", &page.description)],
    )?;
    parts.assemble(project, task, head, injected, user, PromptKind::Initial, Some(page.id.clone()))
}

/// A Feature, BugFix or Layout request against a generated page. The user
/// text is sent unchanged as the last message.
pub fn compose_refinement(
    catalog: &Catalog,
    project: &Project,
    page: &Page,
    head: &Workspace,
    user_text: &str,
    kind: PromptKind,
) -> Result<ComposedPrompt> {
    let parts = parts(catalog, project)?;
    let page = member(project, page)?;
    let template = match kind {
        PromptKind::Feature => "task_feature",
        PromptKind::BugFix => "task_bugfix",
        PromptKind::Layout => "task_layout",
        other => return Err(Error::validation(format!("{other} is not a refinement kind"))),
    };
    require_text(user_text)?;
    require_generated(page)?;
    let injected = select_context_files(parts.profile, Some(page), head);
    let task = parts.templates.render(
        template,
        &[("page_name", &page.name), ("page_description", &page.description)],
    )?;
    parts.assemble(project, task, head, injected, user_text.to_string(), kind, Some(page.id.clone()))
}

/// Connects two generated pages. Injects both manifests and the shared files.
pub fn compose_transition(
    catalog: &Catalog,
    project: &Project,
    source: &Page,
    target: &Page,
    head: &Workspace,
    user_text: &str,
) -> Result<ComposedPrompt> {
    let parts = parts(catalog, project)?;
    let source = member(project, source)?;
    let target = member(project, target)?;
    if source.id == target.id {
        return Err(Error::validation("a page cannot transition to itself"));
    }
    require_text(user_text)?;
    require_generated(source)?;
    require_generated(target)?;
    let mut injected: BTreeSet<RelPath> = select_context_files(parts.profile, Some(source), head).into_iter().collect();
    injected.extend(select_context_files(parts.profile, Some(target), head));
    let task = parts
        .templates
        .render("task_transition", &[("source_page", &source.name), ("target_page", &target.name)])?;
    parts.assemble(
        project,
        task,
        head,
        injected.into_iter().collect(),
        user_text.to_string(),
        PromptKind::Transition,
        Some(source.id.clone()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::DEFAULT_PROFILE;
    use crate::clock::{LogicalClock, SequentialIds};
    use crate::model::{FileEntry, PageStatus};

    fn p(s: &str) -> RelPath {
        RelPath::parse(s).unwrap()
    }

    fn forum() -> (Catalog, Project, Workspace) {
        let cat = Catalog::builtin().unwrap();
        let (ids, clock) = (SequentialIds::default(), LogicalClock::default());
        let mut prj = Project::new(
            "ForumApp",
            "a simple question and answer forum",
            DEFAULT_PROFILE,
            &ids,
            &clock,
        )
        .unwrap();
        prj.add_page(
            PageId::from("pg_q"),
            "Question Submission",
            "I would like to be able to submit questions on this page.",
        )
        .unwrap();
        prj.add_page(PageId::from("pg_a"), "Answers", "register an answer to a question")
            .unwrap();
        let head = cat.profile(DEFAULT_PROFILE).unwrap().scaffold_workspace();
        (cat, prj, head)
    }

    fn generate(prj: &mut Project, head: &mut Workspace, idx: usize, files: &[&str]) {
        let page = &mut prj.pages[idx];
        page.status = PageStatus::Generated;
        for f in files {
            page.file_manifest.insert(p(f));
            head.insert(FileEntry::new(p(f), format!("// {f}")));
        }
    }

    #[test]
    fn preamble_is_deterministic_and_carries_context() {
        let (cat, mut prj, _) = forum();
        let a = compose_system_preamble(&cat, &prj).unwrap();
        assert_eq!(a, compose_system_preamble(&cat, &prj).unwrap());
        assert!(a.contains("a simple question and answer forum"));
        assert!(a.contains("client/") && a.contains("server/") && a.contains(FILE_HEADER));
        prj.context_description.clear();
        let b = compose_system_preamble(&cat, &prj).unwrap();
        assert!(!b.contains("Application context"));
        assert!(b.contains("Output protocol"));
    }

    #[test]
    fn unknown_profile_is_config_error() {
        let (cat, mut prj, _) = forum();
        prj.stack_profile_id = "cobol-cics".into();
        assert_eq!(compose_system_preamble(&cat, &prj).unwrap_err().kind(), crate::ErrorKind::Config);
    }

    #[test]
    fn page_creation_first_and_second_page() {
        let (cat, mut prj, mut head) = forum();
        let page = prj.pages[0].clone();
        let c = compose_page_creation(&cat, &prj, &page, &head).unwrap();
        assert_eq!(c.kind, PromptKind::Initial);
        assert!(c.injected_paths.is_empty());
        assert_eq!(c.messages.len(), 2);
        assert_eq!(c.messages[0].role, Role::System);
        assert!(c.user_text().contains(&page.description));

        generate(&mut prj, &mut head, 0, &["client/src/views/QuestionsView.vue"]);
        let second = prj.pages[1].clone();
        let c = compose_page_creation(&cat, &prj, &second, &head).unwrap();
        // Oracle: shared paths of the profile that exist in HEAD, sorted.
        let profile = cat.profile(DEFAULT_PROFILE).unwrap();
        let mut expected: Vec<RelPath> =
            profile.shared_context_paths.iter().filter(|s| head.contains(s)).cloned().collect();
        expected.sort();
        assert!(!expected.is_empty());
        assert_eq!(c.injected_paths, expected);
        assert_eq!(c.messages.len(), 3);

        let first = prj.pages[0].clone();
        let err = compose_page_creation(&cat, &prj, &first, &head).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::ContractViolation);
    }

    #[test]
    fn page_creation_requires_description() {
        let (cat, mut prj, head) = forum();
        prj.add_page(PageId::from("pg_e"), "Empty", "  ").unwrap();
        let page = prj.pages[2].clone();
        let err = compose_page_creation(&cat, &prj, &page, &head).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Validation);
    }

    #[test]
    fn refinement_embeds_text_verbatim_and_injects_manifest() {
        let (cat, mut prj, mut head) = forum();
        let pending = prj.pages[0].clone();
        let err = compose_refinement(&cat, &prj, &pending, &head, "x", PromptKind::Feature).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::ContractViolation);

        generate(&mut prj, &mut head, 0, &["client/src/views/QuestionsView.vue"]);
        let page = prj.pages[0].clone();
        let text = "the page should have a button to delete a question";
        let c = compose_refinement(&cat, &prj, &page, &head, text, PromptKind::Feature).unwrap();
        assert_eq!(c.user_text(), text);
        assert!(c.injected_paths.contains(&p("client/src/views/QuestionsView.vue")));
        assert!(c.messages[1].text.contains("// client/src/views/QuestionsView.vue"));

        let bug = "the delete question button is not working";
        let b = compose_refinement(&cat, &prj, &page, &head, bug, PromptKind::BugFix).unwrap();
        assert_eq!(b.kind, PromptKind::BugFix);
        assert_eq!(b.injected_paths, c.injected_paths);

        let err = compose_refinement(&cat, &prj, &page, &head, "", PromptKind::Layout).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Validation);
        let err = compose_refinement(&cat, &prj, &page, &head, "x", PromptKind::Transition).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Validation);
    }

    #[test]
    fn transition_injects_union_of_manifests_and_shared_files() {
        let (mut cat, mut prj, mut head) = forum();
        let mut profile = cat.profile(DEFAULT_PROFILE).unwrap().clone();
        profile.shared_context_paths = vec![p("client/src/router/index.ts"), p("server/src/index.ts")];
        cat.insert_profile(profile);
        generate(&mut prj, &mut head, 0, &["client/src/views/QuestionsView.vue", "server/src/routes/questions.ts", "client/src/components/QuestionRow.vue"]);
        generate(&mut prj, &mut head, 1, &["client/src/views/AnswersView.vue", "server/src/routes/answers.ts"]);
        let (src, dst) = (prj.pages[0].clone(), prj.pages[1].clone());
        let text = "Add a button to view the registered answers on the Answers page.";
        let c = compose_transition(&cat, &prj, &src, &dst, &head, text).unwrap();
        assert_eq!(c.kind, PromptKind::Transition);
        assert_eq!(c.user_text(), text);
        let mut oracle: BTreeSet<RelPath> = src.file_manifest.union(&dst.file_manifest).cloned().collect();
        oracle.insert(p("client/src/router/index.ts"));
        oracle.insert(p("server/src/index.ts"));
        assert_eq!(oracle.len(), 7);
        assert_eq!(c.injected_paths, oracle.into_iter().collect::<Vec<_>>());

        let err = compose_transition(&cat, &prj, &src, &src, &head, text).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Validation);
        let pending = prj.add_page(PageId::from("pg_x"), "Later", "later").unwrap().clone();
        let err = compose_transition(&cat, &prj, &src, &pending, &head, text).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::ContractViolation);
    }

    #[test]
    fn exactly_one_system_message() {
        let (cat, mut prj, mut head) = forum();
        generate(&mut prj, &mut head, 0, &["client/src/views/QuestionsView.vue"]);
        let page = prj.pages[0].clone();
        for kind in [PromptKind::Feature, PromptKind::BugFix, PromptKind::Layout] {
            let c = compose_refinement(&cat, &prj, &page, &head, "make it nicer", kind).unwrap();
            assert_eq!(c.messages.iter().filter(|m| m.role == Role::System).count(), 1);
            assert_eq!(c.messages[0].role, Role::System);
        }
    }
}
