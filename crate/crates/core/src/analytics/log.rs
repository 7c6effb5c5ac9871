use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{classify_prompt, PromptKind};

/// One prompt of a study session.
///
/// `rollback` marks a prompt whose result was abandoned by a rollback right
/// after it; `rollback_steps` is how far that rollback went back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub participant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub text: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub rollback: bool,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub rollback_steps: u32,
    /// Marks the participant's first prompt of a working session; only
    /// consulted when the entry carries no kind label.
    #[serde(default, skip_serializing_if = "is_false")]
    pub session_start: bool,
    /// Padding entry added to reach a known per-category count.
    #[serde(default, skip_serializing_if = "is_false")]
    pub synthetic: bool,
}

fn one() -> u32 {
    1
}

fn is_one(n: &u32) -> bool {
    *n == 1
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl LogEntry {
    /// The hand label when present, else the keyword classifier. Always one
    /// of the five report categories.
    pub fn resolved_kind(&self) -> PromptKind {
        let kind = match &self.kind {
            Some(label) => label.parse().unwrap_or(PromptKind::Other),
            None => classify_prompt(&self.text, self.session_start),
        };
        kind.folded()
    }
}

/// Line-delimited JSON, one [`LogEntry`] per line. Blank lines and lines
/// starting with `#` are skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptLog {
    pub entries: Vec<LogEntry>,
}

impl PromptLog {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<LogEntry> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let entry: LogEntry =
                serde_json::from_str(line).map_err(|e| Error::validation(format!("log line {}: {e}", i + 1)))?;
            if entry.participant.trim().is_empty() {
                return Err(Error::validation(format!("log line {}: empty participant", i + 1)));
            }
            if let Some(label) = &entry.kind {
                label
                    .parse::<PromptKind>()
                    .map_err(|e| Error::validation(format!("log line {}: {e}", i + 1)))?;
            }
            if entry.rollback_steps == 0 {
                return Err(Error::validation(format!("log line {}: rollback_steps must be at least 1", i + 1)));
            }
            if let Some(prev) = entries.iter().rev().find(|e| e.participant == entry.participant) {
                if entry.timestamp < prev.timestamp {
                    return Err(Error::validation(format!(
                        "log line {}: timestamp goes backwards for participant {}",
                        i + 1,
                        entry.participant
                    )));
                }
            }
            entries.push(entry);
        }
        Ok(PromptLog { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read log {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("entry serializes") + "\n")
            .collect()
    }

    /// Participants in order of first appearance.
    pub fn participants(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !seen.contains(&e.participant.as_str()) {
                seen.push(&e.participant);
            }
        }
        seen
    }

    pub fn entries_for<'a>(&'a self, participant: &'a str) -> impl Iterator<Item = &'a LogEntry> + 'a {
        self.entries.iter().filter(move |e| e.participant == participant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates() {
        let log = PromptLog::parse(
            "# header\n\
             {\"participant\":\"P1\",\"kind\":\"initial\",\"text\":\"build a forum\",\"timestamp\":1}\n\
             \n\
             {\"participant\":\"P2\",\"text\":\"fix the error\",\"timestamp\":0}\n\
             {\"participant\":\"P1\",\"text\":\"make the button green\",\"timestamp\":1,\"rollback\":true}\n",
        )
        .unwrap();
        assert_eq!(log.participants(), ["P1", "P2"]);
        let kinds: Vec<PromptKind> = log.entries.iter().map(LogEntry::resolved_kind).collect();
        assert_eq!(kinds, [PromptKind::Initial, PromptKind::BugFix, PromptKind::Layout]);
        assert_eq!(PromptLog::parse(&log.to_jsonl()).unwrap(), log);
    }

    #[test]
    fn rejects_backwards_time_and_bad_labels() {
        let back = "{\"participant\":\"P1\",\"text\":\"a\",\"timestamp\":5}\n{\"participant\":\"P1\",\"text\":\"b\",\"timestamp\":4}";
        assert!(PromptLog::parse(back).unwrap_err().to_string().contains("line 2"));
        let label = "{\"participant\":\"P1\",\"kind\":\"refactor\",\"text\":\"a\",\"timestamp\":5}";
        assert!(PromptLog::parse(label).is_err());
        let extra = "{\"participant\":\"P1\",\"text\":\"a\",\"timestamp\":5,\"mood\":1}";
        assert!(PromptLog::parse(extra).is_err());
    }
}
