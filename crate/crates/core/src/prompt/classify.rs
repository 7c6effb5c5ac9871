use crate::prompt::PromptKind;

const BUGFIX: &[&str] = &["error", "fix", "bug", "not working", "does not work", "doesn't work"];
const LAYOUT: &[&str] = &["button", "color", "colour", "style", "layout", "table"];
const OTHER: &[&str] = &["install", "configure", "setup", "set up"];

/// Keyword heuristic for imported logs whose prompts carry no label.
///
/// Rules are tried in order: bug-fix words, layout words, environment words,
/// otherwise Feature. `first_in_session` marks the opening prompt of a
/// participant, which is always Initial. Keywords match at word starts, so
/// "errors" and "fixed" count but "prefix" does not.
pub fn classify_prompt(text: &str, first_in_session: bool) -> PromptKind {
    let words = normalize(text);
    if words.is_empty() {
        return PromptKind::Other;
    }
    if first_in_session {
        return PromptKind::Initial;
    }
    let hit = |keys: &[&str]| keys.iter().any(|k| contains_at_word_start(&words, k));
    if hit(BUGFIX) {
        PromptKind::BugFix
    } else if hit(LAYOUT) {
        PromptKind::Layout
    } else if hit(OTHER) {
        PromptKind::Other
    } else {
        PromptKind::Feature
    }
}

/// Lowercases and collapses every run of non-word characters to one space.
/// Apostrophes are kept so that "doesn't" stays one word.
fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars().flat_map(char::to_lowercase) {
        let c = if c == '\u{2019}' { '\'' } else { c };
        if c.is_alphanumeric() || c == '\'' {
            out.push(c);
        } else if !out.ends_with(' ') && !out.is_empty() {
            out.push(' ');
        }
    }
    out.trim_end().to_string()
}

fn contains_at_word_start(words: &str, key: &str) -> bool {
    words
        .match_indices(key)
        .any(|(i, _)| i == 0 || words.as_bytes()[i - 1] == b' ')
}
