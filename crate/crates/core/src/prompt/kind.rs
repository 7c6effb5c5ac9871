use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// What a prompt is for.
///
/// `Initial`, `Feature`, `BugFix`, `Layout` and `Other` are the five study
/// categories. `Transition` and `Predefined` are tool-internal kinds of
/// feature work; [`PromptKind::folded`] maps them back onto `Feature`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptKind {
    Initial,
    Feature,
    BugFix,
    Layout,
    Transition,
    Predefined,
    Other,
}

impl PromptKind {
    pub const ALL: [PromptKind; 7] = [
        PromptKind::Initial,
        PromptKind::Feature,
        PromptKind::BugFix,
        PromptKind::Layout,
        PromptKind::Transition,
        PromptKind::Predefined,
        PromptKind::Other,
    ];

    /// The five report categories, in report row order.
    pub const CATEGORIES: [PromptKind; 5] = [
        PromptKind::Initial,
        PromptKind::Feature,
        PromptKind::BugFix,
        PromptKind::Layout,
        PromptKind::Other,
    ];

    pub fn folded(self) -> PromptKind {
        match self {
            PromptKind::Transition | PromptKind::Predefined => PromptKind::Feature,
            k => k,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::Initial => "Initial",
            PromptKind::Feature => "Feature",
            PromptKind::BugFix => "BugFix",
            PromptKind::Layout => "Layout",
            PromptKind::Transition => "Transition",
            PromptKind::Predefined => "Predefined",
            PromptKind::Other => "Other",
        }
    }

    /// Row label used in the per-participant report.
    pub fn report_label(self) -> &'static str {
        match self.folded() {
            PromptKind::Initial => "Initial",
            PromptKind::Feature => "Features",
            PromptKind::BugFix => "Bug Fixing",
            PromptKind::Layout => "Layout",
            _ => "Other",
        }
    }

    pub fn is_refinement(self) -> bool {
        matches!(self, PromptKind::Feature | PromptKind::BugFix | PromptKind::Layout)
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown prompt kind `{0}`")]
pub struct ParseKindError(pub String);

impl FromStr for PromptKind {
    type Err = ParseKindError;

    /// Accepts the canonical names plus the report labels and a few common
    /// spellings used in hand-labelled logs.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match norm.as_str() {
            "initial" => PromptKind::Initial,
            "feature" | "features" => PromptKind::Feature,
            "bugfix" | "bugfixing" | "bug" | "fix" => PromptKind::BugFix,
            "layout" | "style" => PromptKind::Layout,
            "transition" => PromptKind::Transition,
            "predefined" => PromptKind::Predefined,
            "other" => PromptKind::Other,
            _ => return Err(ParseKindError(s.to_string())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn folding_yields_exactly_five_categories() {
        let folded: BTreeSet<_> = PromptKind::ALL.iter().map(|k| k.folded()).collect();
        let cats: BTreeSet<_> = PromptKind::CATEGORIES.into_iter().collect();
        assert_eq!(folded, cats);
    }

    #[test]
    fn parses_report_labels() {
        assert_eq!("Bug Fixing".parse::<PromptKind>().unwrap(), PromptKind::BugFix);
        assert_eq!("Features".parse::<PromptKind>().unwrap(), PromptKind::Feature);
        assert!("nonsense".parse::<PromptKind>().is_err());
    }
}
