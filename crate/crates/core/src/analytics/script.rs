use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn one() -> u32 {
    1
}

fn default_profile() -> String {
    "vue-express".to_string()
}

/// One step of a scripted session. Serialized with a `step` tag, e.g.
/// `{"step":"submit","kind":"bugfix","page":"Tasks","text":"…"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", rename_all = "snake_case", deny_unknown_fields)]
pub enum Step {
    CreateProject {
        name: String,
        #[serde(default)]
        description: String,
        #[serde(default = "default_profile")]
        profile: String,
    },
    AddPage {
        name: String,
        #[serde(default)]
        description: String,
    },
    ApplyFeature {
        feature: String,
    },
    /// `kind` is `initial` (generate the page from its description),
    /// `feature`, `bugfix`, `layout` or `transition` (needs `target`).
    Submit {
        kind: String,
        page: String,
        #[serde(default)]
        target: Option<String>,
        #[serde(default)]
        text: String,
    },
    Rollback {
        #[serde(default = "one")]
        steps: u32,
    },
    Checkout {
        label: String,
    },
    Expect(Expectation),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "expect", rename_all = "snake_case", deny_unknown_fields)]
pub enum Expectation {
    FileExists {
        path: String,
    },
    FileAbsent {
        path: String,
    },
    FileContains {
        path: String,
        needle: String,
    },
    TreeDigest {
        digest: String,
    },
    PageStatus {
        page: String,
        status: String,
    },
    Graph {
        #[serde(default)]
        nodes: Option<usize>,
        #[serde(default)]
        active_path: Option<usize>,
        #[serde(default)]
        abandoned_branches: Option<usize>,
        #[serde(default)]
        discarded: Option<usize>,
    },
    Rollbacks {
        count: u32,
    },
    /// Every persisted request of the project used temperature 0.
    TemperatureZero,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptLine {
    /// 1-based line number in the source file.
    pub line: usize,
    pub step: Step,
}

/// Line-delimited JSON steps; blank lines and `#` comments are skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionScript {
    pub steps: Vec<ScriptLine>,
}

impl SessionScript {
    pub fn parse(text: &str) -> Result<Self> {
        let mut steps = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let raw = raw.trim();
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            let step: Step =
                serde_json::from_str(raw).map_err(|e| Error::validation(format!("script line {}: {e}", i + 1)))?;
            steps.push(ScriptLine { line: i + 1, step });
        }
        match steps.first() {
            Some(ScriptLine {
                step: Step::CreateProject { .. },
                ..
            }) => {}
            _ => return Err(Error::validation("a script must start with create_project")),
        }
        if steps.iter().skip(1).any(|s| matches!(s.step, Step::CreateProject { .. })) {
            return Err(Error::validation("a script drives exactly one project"));
        }
        Ok(SessionScript { steps })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read script {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_round_trip() {
        let text = r#"
# a tiny session
{"step":"create_project","name":"TodoApp","description":"tasks"}
{"step":"add_page","name":"Tasks"}
{"step":"submit","kind":"initial","page":"Tasks"}
{"step":"rollback","steps":2}
{"step":"expect","expect":"graph","active_path":1}
{"step":"expect","expect":"temperature_zero"}
"#;
        let s = SessionScript::parse(text).unwrap();
        assert_eq!(s.steps.len(), 6);
        assert_eq!(s.steps[0].line, 3);
        assert_eq!(s.steps[3].step, Step::Rollback { steps: 2 });
        assert_eq!(
            s.steps[4].step,
            Step::Expect(Expectation::Graph {
                nodes: None,
                active_path: Some(1),
                abandoned_branches: None,
                discarded: None
            })
        );
        for l in &s.steps {
            let again: Step = serde_json::from_str(&serde_json::to_string(&l.step).unwrap()).unwrap();
            assert_eq!(again, l.step);
        }
    }

    #[test]
    fn rejects_malformed_scripts() {
        assert!(SessionScript::parse(r#"{"step":"add_page","name":"x"}"#).is_err());
        assert!(SessionScript::parse(r#"{"step":"create_project","name":"x","colour":1}"#).is_err());
        let err = SessionScript::parse("{\"step\":\"create_project\",\"name\":\"x\"}\n{\"step\":\"jump\"}").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }
}
