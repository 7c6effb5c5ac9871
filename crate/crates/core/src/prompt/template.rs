//! Prompt templates: plain UTF-8 files with a short header and a body using
//! `{{slot_name}}` placeholders.
//!
//! ```text
//! kind: Feature
//! slots: page_name, page_description
//! ---
//! You are refining the page "{{page_name}}" ...
//! ```

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::prompt::PromptKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: String,
    /// `None` for templates shared by every kind (`kind: any`).
    pub kind: Option<PromptKind>,
    pub slots: Vec<String>,
    pub body: String,
}

impl PromptTemplate {
    pub fn parse(id: &str, text: &str) -> Result<Self> {
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);
        let (header, body) = text
            .split_once("\n---\n")
            .ok_or_else(|| Error::config(format!("template `{id}`: missing `---` header separator")))?;
        let mut kind = None;
        let mut slots = Vec::new();
        let mut saw_kind = false;
        for line in header.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| Error::config(format!("template `{id}`: bad header line `{line}`")))?;
            match key.trim() {
                "kind" => {
                    saw_kind = true;
                    let v = value.trim();
                    if v != "any" {
                        kind = Some(v.parse().map_err(|e| Error::config(format!("template `{id}`: {e}")))?);
                    }
                }
                "slots" => {
                    slots = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect();
                }
                other => return Err(Error::config(format!("template `{id}`: unknown header `{other}`"))),
            }
        }
        if !saw_kind {
            return Err(Error::config(format!("template `{id}`: missing `kind` header")));
        }
        let template = PromptTemplate {
            id: id.to_string(),
            kind,
            slots,
            body: body.to_string(),
        };
        template.check_slots()?;
        Ok(template)
    }

    /// Placeholders that occur in the body, in first-occurrence order.
    pub fn placeholders(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for piece in scan(&self.body) {
            if let Piece::Slot(name) = piece {
                if !seen.iter().any(|s: &String| s == name) {
                    seen.push(name.to_string());
                }
            }
        }
        seen
    }

    fn check_slots(&self) -> Result<()> {
        let declared: BTreeSet<_> = self.slots.iter().cloned().collect();
        if declared.len() != self.slots.len() {
            return Err(Error::config(format!("template `{}`: duplicate slot", self.id)));
        }
        let used: BTreeSet<_> = self.placeholders().into_iter().collect();
        if declared != used {
            let missing: Vec<_> = used.difference(&declared).collect();
            let unused: Vec<_> = declared.difference(&used).collect();
            return Err(Error::config(format!(
                "template `{}`: undeclared placeholders {missing:?}, unused slots {unused:?}",
                self.id
            )));
        }
        Ok(())
    }

    /// Substitutes every slot. Values are inserted literally; placeholders
    /// inside values are not expanded.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        let map: BTreeMap<&str, &str> = values.iter().copied().collect();
        for slot in &self.slots {
            if !map.contains_key(slot.as_str()) {
                return Err(Error::config(format!("template `{}`: no value for slot `{slot}`", self.id)));
            }
        }
        let mut out = String::with_capacity(self.body.len());
        for piece in scan(&self.body) {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => out.push_str(map[name]),
            }
        }
        Ok(out)
    }
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

fn is_slot_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn scan(body: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) if is_slot_name(&after[..end]) => {
                if start > 0 {
                    out.push(Piece::Text(&rest[..start]));
                }
                out.push(Piece::Slot(&after[..end]));
                rest = &after[end + 2..];
            }
            _ => {
                out.push(Piece::Text(&rest[..start + 2]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        out.push(Piece::Text(rest));
    }
    out
}

/// All templates keyed by id.
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<String, PromptTemplate>,
}

impl TemplateSet {
    /// Ids the composer relies on.
    pub const REQUIRED: [&'static str; 9] = [
        "system_preamble",
        "context_section",
        "task_page_creation",
        "user_page_creation",
        "task_feature",
        "task_bugfix",
        "task_layout",
        "task_transition",
        "context_files",
    ];

    pub fn from_files<'a>(files: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut templates = BTreeMap::new();
        for (name, text) in files {
            let id = name.strip_suffix(".tmpl").unwrap_or(name);
            let t = PromptTemplate::parse(id, text)?;
            templates.insert(t.id.clone(), t);
        }
        let set = TemplateSet { templates };
        for id in Self::REQUIRED {
            if !set.templates.contains_key(id) {
                return Err(Error::config(format!("template `{id}` is missing")));
            }
        }
        Ok(set)
    }

    pub fn get(&self, id: &str) -> Result<&PromptTemplate> {
        self.templates
            .get(id)
            .ok_or_else(|| Error::config(format!("template `{id}` is missing")))
    }

    pub fn render(&self, id: &str, values: &[(&str, &str)]) -> Result<String> {
        self.get(id)?.render(values)
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptTemplate> {
        self.templates.values()
    }
}
