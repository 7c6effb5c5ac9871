//! The one place that talks to a chat-completion provider.
//!
//! Every request is created with temperature 0 and persisted before it is
//! dispatched; the response is persisted when it arrives. Mock mode answers
//! from fixture files keyed by [`canonical_request_hash`].

mod live;
mod mock;

use std::fmt;
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};

pub use live::LiveProvider;
pub use mock::MockProvider;

use crate::clock::{Clock, IdSource, Timestamp};
use crate::digest::Digest;
use crate::error::{Error, Result};
use crate::model::{PageId, ProjectId, RequestId, ResponseId};
use crate::prompt::{ComposedPrompt, Message, PromptKind};
use crate::store::Store;

/// The only temperature this system ever sends.
pub const TEMPERATURE: f64 = 0.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Live,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff_base_ms: 500,
        }
    }
}

#[derive(Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    /// Full URL of an OpenAI-compatible chat-completions endpoint.
    #[serde(default)]
    pub endpoint_url: Option<String>,
    #[serde(default, skip_serializing)]
    pub credential: Option<String>,
    pub model_id: String,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub fixtures_dir: Option<PathBuf>,
}

fn default_timeout() -> u64 {
    120
}

impl fmt::Debug for ProviderConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProviderConfig")
            .field("mode", &self.mode)
            .field("endpoint_url", &self.endpoint_url)
            .field("credential", &self.credential.as_ref().map(|_| "<redacted>"))
            .field("model_id", &self.model_id)
            .field("timeout_s", &self.timeout_s)
            .field("retry", &self.retry)
            .field("max_tokens", &self.max_tokens)
            .field("fixtures_dir", &self.fixtures_dir)
            .finish()
    }
}

impl ProviderConfig {
    pub fn mock(fixtures_dir: impl Into<PathBuf>, model_id: &str) -> Self {
        ProviderConfig {
            mode: ProviderMode::Mock,
            endpoint_url: None,
            credential: None,
            model_id: model_id.to_string(),
            timeout_s: default_timeout(),
            retry: RetryPolicy::default(),
            max_tokens: None,
            fixtures_dir: Some(fixtures_dir.into()),
        }
    }

    pub fn live(endpoint_url: &str, credential: &str, model_id: &str) -> Self {
        ProviderConfig {
            mode: ProviderMode::Live,
            endpoint_url: Some(endpoint_url.to_string()),
            credential: Some(credential.to_string()),
            model_id: model_id.to_string(),
            timeout_s: default_timeout(),
            retry: RetryPolicy::default(),
            max_tokens: None,
            fixtures_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.trim().is_empty() {
            return Err(Error::config("provider model_id must be set"));
        }
        if self.retry.max_attempts == 0 {
            return Err(Error::config("provider retry.max_attempts must be at least 1"));
        }
        match self.mode {
            ProviderMode::Mock if self.fixtures_dir.is_none() => {
                Err(Error::config("mock provider mode requires fixtures_dir"))
            }
            ProviderMode::Live if self.endpoint_url.as_deref().unwrap_or("").is_empty() => {
                Err(Error::config("live provider mode requires endpoint_url"))
            }
            ProviderMode::Live if self.credential.as_deref().unwrap_or("").is_empty() => {
                Err(Error::config("live provider mode requires a credential"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: Option<u32>,
    pub completion: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub id: RequestId,
    pub project_id: ProjectId,
    pub composed_prompt: ComposedPrompt,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub request_hash: Digest,
    pub sent_at: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptResponse {
    pub id: ResponseId,
    pub request_id: RequestId,
    pub text: String,
    pub token_usage: TokenUsage,
    pub latency_ms: i64,
    pub finish_reason: String,
    pub received_at: Timestamp,
}

/// A persisted request and, unless the call failed, its response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: PromptRequest,
    pub response: Option<PromptResponse>,
}

#[derive(Serialize)]
struct Canonical<'a> {
    model: &'a str,
    messages: Vec<(&'a str, &'a str)>,
}

/// SHA-256 over `{"model":…,"messages":[[role,text],…]}` as compact JSON.
/// Only roles, texts and the model id take part, so metadata such as
/// injected path lists or page ids never changes the key.
pub fn canonical_request_hash(prompt: &ComposedPrompt, model_id: &str) -> Digest {
    let canonical = Canonical {
        model: model_id,
        messages: prompt.messages.iter().map(|m| (m.role.as_str(), m.text.as_str())).collect(),
    };
    Digest::of(&serde_json::to_vec(&canonical).expect("plain strings serialize"))
}

pub struct ProviderRequest<'a> {
    pub model_id: &'a str,
    pub messages: &'a [Message],
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub hash: &'a Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: TokenUsage,
    pub finish_reason: String,
}

#[derive(Debug)]
pub enum Failure {
    Timeout,
    /// Worth retrying: connection trouble, 429, 5xx.
    Transient(String),
    Fatal(Error),
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ProviderRequest<'_>) -> std::result::Result<Completion, Failure>;
}

pub struct Gateway {
    config: ProviderConfig,
    provider: Box<dyn Provider>,
}

impl Gateway {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        config.validate()?;
        let provider: Box<dyn Provider> = match config.mode {
            ProviderMode::Mock => Box::new(MockProvider::new(config.fixtures_dir.clone().expect("validated"))),
            ProviderMode::Live => Box::new(LiveProvider::new(
                config.endpoint_url.as_deref().expect("validated"),
                config.credential.as_deref().expect("validated"),
                Duration::from_secs(config.timeout_s),
            )),
        };
        Ok(Gateway { config, provider })
    }

    /// Uses a caller-supplied provider, for recording fixtures or tests.
    pub fn with_provider(config: ProviderConfig, provider: Box<dyn Provider>) -> Result<Self> {
        if config.model_id.trim().is_empty() || config.retry.max_attempts == 0 {
            return Err(Error::config("provider model_id and retry.max_attempts must be set"));
        }
        Ok(Gateway { config, provider })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    /// Persists the request, calls the provider with bounded retries, then
    /// persists the response. A failed call leaves the request on record.
    pub fn send(
        &self,
        store: &Store,
        project_id: &ProjectId,
        prompt: &ComposedPrompt,
        ids: &dyn IdSource,
        clock: &dyn Clock,
    ) -> Result<Exchange> {
        let hash = canonical_request_hash(prompt, &self.config.model_id);
        let request = PromptRequest {
            id: RequestId::generate(ids),
            project_id: project_id.clone(),
            composed_prompt: prompt.clone(),
            model_id: self.config.model_id.clone(),
            temperature: TEMPERATURE,
            max_tokens: self.config.max_tokens,
            request_hash: hash,
            sent_at: clock.now(),
        };
        store.write(|c| insert_request(c, &request))?;

        let call = ProviderRequest {
            model_id: &request.model_id,
            messages: &request.composed_prompt.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            hash: &hash,
        };
        let attempts = self.config.retry.max_attempts;
        let mut last = Failure::Timeout;
        let mut completion = None;
        for attempt in 1..=attempts {
            match self.provider.complete(&call) {
                Ok(c) => {
                    completion = Some(c);
                    break;
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(f) => {
                    log::warn!("provider attempt {attempt}/{attempts} failed: {f:?}");
                    last = f;
                    if attempt < attempts {
                        let backoff = self.config.retry.backoff_base_ms.saturating_mul(1 << (attempt - 1).min(16));
                        thread::sleep(Duration::from_millis(backoff));
                    }
                }
            }
        }
        let Some(completion) = completion else {
            return Err(match last {
                Failure::Timeout => Error::ProviderTimeout { attempts },
                Failure::Transient(msg) => Error::Provider(msg),
                Failure::Fatal(e) => e,
            });
        };

        let received_at = clock.now();
        let response = PromptResponse {
            id: ResponseId::generate(ids),
            request_id: request.id.clone(),
            text: completion.text,
            token_usage: completion.usage,
            latency_ms: received_at.0 - request.sent_at.0,
            finish_reason: completion.finish_reason,
            received_at,
        };
        store.write(|c| insert_response(c, &response))?;
        Ok(Exchange {
            request,
            response: Some(response),
        })
    }
}

pub fn insert_request(conn: &Connection, r: &PromptRequest) -> Result<()> {
    if r.temperature != TEMPERATURE {
        return Err(Error::contract(format!("refusing to record temperature {}", r.temperature)));
    }
    let seq: i64 = conn.query_row(
        "SELECT COALESCE(MAX(seq), 0) + 1 FROM prompt_requests WHERE project_id = ?1",
        [r.project_id.as_str()],
        |row| row.get(0),
    )?;
    conn.execute(
        "INSERT INTO prompt_requests (id, project_id, seq, page_id, kind, composed_prompt, model_id, temperature, max_tokens, request_hash, sent_at)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8, ?9, ?10, ?11)",
        params![
            r.id.as_str(),
            r.project_id.as_str(),
            seq,
            r.composed_prompt.page_id.as_ref().map(|p| p.as_str()),
            r.composed_prompt.kind.as_str(),
            serde_json::to_string(&r.composed_prompt)?,
            r.model_id,
            r.temperature,
            r.max_tokens,
            r.request_hash.to_hex(),
            r.sent_at.0,
        ],
    )?;
    Ok(())
}

pub fn insert_response(conn: &Connection, r: &PromptResponse) -> Result<()> {
    conn.execute(
        "INSERT INTO prompt_responses (id, request_id, text, prompt_tokens, completion_tokens, latency_ms, finish_reason, received_at)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6, ?7, ?8)",
        params![
            r.id.as_str(),
            r.request_id.as_str(),
            r.text,
            r.token_usage.prompt,
            r.token_usage.completion,
            r.latency_ms,
            r.finish_reason,
            r.received_at.0,
        ],
    )?;
    Ok(())
}

/// Every exchange of a project in the order the requests were sent,
/// including those whose snapshots were later rolled back.
pub fn transcript(conn: &Connection, project_id: &ProjectId) -> Result<Vec<Exchange>> {
    let mut stmt = conn.prepare(
        "SELECT q.id, q.composed_prompt, q.model_id, q.temperature, q.max_tokens, q.request_hash, q.sent_at,
                r.id, r.text, r.prompt_tokens, r.completion_tokens, r.latency_ms, r.finish_reason, r.received_at
         FROM prompt_requests q LEFT JOIN prompt_responses r ON r.request_id = q.id
         WHERE q.project_id = ?1 ORDER BY q.seq",
    )?;
    let rows = stmt.query_map([project_id.as_str()], |row| {
        Ok((
            (
                row.get::<_, String>(0)?,
                row.get::<_, String>(1)?,
                row.get::<_, String>(2)?,
                row.get::<_, f64>(3)?,
                row.get::<_, Option<u32>>(4)?,
                row.get::<_, String>(5)?,
                row.get::<_, i64>(6)?,
            ),
            match row.get::<_, Option<String>>(7)? {
                None => None,
                Some(id) => Some(PromptResponse {
                    id: ResponseId(id),
                    request_id: RequestId(row.get(0)?),
                    text: row.get(8)?,
                    token_usage: TokenUsage {
                        prompt: row.get(9)?,
                        completion: row.get(10)?,
                    },
                    latency_ms: row.get(11)?,
                    finish_reason: row.get(12)?,
                    received_at: Timestamp(row.get(13)?),
                }),
            },
        ))
    })?;
    let mut out = Vec::new();
    for row in rows {
        let ((id, prompt, model_id, temperature, max_tokens, hash, sent_at), response) = row?;
        out.push(Exchange {
            request: PromptRequest {
                id: RequestId(id),
                project_id: project_id.clone(),
                composed_prompt: serde_json::from_str(&prompt)
                    .map_err(|e| Error::config(format!("corrupt stored prompt: {e}")))?,
                model_id,
                temperature,
                max_tokens,
                request_hash: hash.parse().map_err(|e| Error::config(format!("corrupt request hash: {e}")))?,
                sent_at: Timestamp(sent_at),
            },
            response,
        });
    }
    Ok(out)
}

pub fn count_requests(conn: &Connection, project_id: Option<&ProjectId>) -> Result<usize> {
    let n: i64 = match project_id {
        Some(p) => conn.query_row("SELECT COUNT(*) FROM prompt_requests WHERE project_id = ?1", [p.as_str()], |r| r.get(0))?,
        None => conn.query_row("SELECT COUNT(*) FROM prompt_requests", [], |r| r.get(0))?,
    };
    Ok(n as usize)
}

/// Temperatures of every stored request, for policy audits.
pub fn recorded_temperatures(conn: &Connection) -> Result<Vec<f64>> {
    let mut stmt = conn.prepare("SELECT temperature FROM prompt_requests ORDER BY project_id, seq")?;
    let rows = stmt.query_map([], |r| r.get(0))?;
    Ok(rows.collect::<rusqlite::Result<_>>()?)
}

/// Responses whose request row is missing. Always empty unless the store was
/// edited by hand.
pub fn orphan_responses(conn: &Connection) -> Result<Vec<ResponseId>> {
    let mut stmt = conn.prepare(
        "SELECT r.id FROM prompt_responses r LEFT JOIN prompt_requests q ON q.id = r.request_id WHERE q.id IS NULL",
    )?;
    let rows = stmt.query_map([], |r| Ok(ResponseId(r.get(0)?)))?;
    Ok(rows.collect::<rusqlite::Result<_>>()?)
}

pub fn get_request_kind(conn: &Connection, id: &RequestId) -> Result<Option<(PromptKind, Option<PageId>)>> {
    let row: Option<(String, Option<String>)> = conn
        .query_row(
            "SELECT kind, page_id FROM prompt_requests WHERE id = ?1",
            [id.as_str()],
            |r| Ok((r.get(0)?, r.get(1)?)),
        )
        .optional()?;
    row.map(|(k, p)| {
        let kind = k.parse().map_err(|e| Error::config(format!("{e}")))?;
        Ok((kind, p.map(PageId)))
    })
    .transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{LogicalClock, SequentialIds};
    use crate::model::Project;
    use crate::prompt::Role;
    use crate::store::insert_project;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn prompt(user: &str) -> ComposedPrompt {
        ComposedPrompt {
            messages: vec![
                Message {
                    role: Role::System,
                    text: "sys".into(),
                },
                Message {
                    role: Role::User,
                    text: user.into(),
                },
            ],
            kind: PromptKind::Feature,
            page_id: None,
            injected_paths: vec![],
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = canonical_request_hash(&prompt("add a task"), "gpt-x");
        assert_eq!(a, canonical_request_hash(&prompt("add a task"), "gpt-x"));
        assert_ne!(a, canonical_request_hash(&prompt("add a task!"), "gpt-x"));
        assert_ne!(a, canonical_request_hash(&prompt("add a task"), "gpt-y"));
        // Independent serialization of the same canonical form.
        let manual = r#"{"model":"gpt-x","messages":[["system","sys"],["user","add a task"]]}"#;
        assert_eq!(a, Digest::of(manual.as_bytes()));
    }

    #[test]
    fn config_validation() {
        assert!(ProviderConfig::mock("/tmp", "m").validate().is_ok());
        let mut c = ProviderConfig::mock("/tmp", "m");
        c.fixtures_dir = None;
        assert_eq!(c.validate().unwrap_err().kind(), crate::ErrorKind::Config);
        let mut l = ProviderConfig::live("http://x", "k", "m");
        assert!(l.validate().is_ok());
        l.credential = None;
        assert!(l.validate().is_err());
        assert!(!format!("{:?}", ProviderConfig::live("http://x", "sk-secret", "m")).contains("sk-secret"));
    }

    struct Flaky {
        calls: AtomicUsize,
        fail_first: usize,
        failure: fn() -> Failure,
    }

    impl Provider for Flaky {
        fn complete(&self, _: &ProviderRequest<'_>) -> std::result::Result<Completion, Failure> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.fail_first {
                return Err((self.failure)());
            }
            Ok(Completion {
                text: "ok".into(),
                usage: TokenUsage::default(),
                finish_reason: "stop".into(),
            })
        }
    }

    fn setup() -> (Store, Project, SequentialIds, LogicalClock) {
        let store = Store::open_in_memory().unwrap();
        let (ids, clock) = (SequentialIds::default(), LogicalClock::default());
        let project = Project::new("P", "", "static-test", &ids, &clock).unwrap();
        store.write(|c| insert_project(c, &project)).unwrap();
        (store, project, ids, clock)
    }

    fn config() -> ProviderConfig {
        let mut c = ProviderConfig::mock("/nonexistent", "m");
        c.retry.backoff_base_ms = 1;
        c
    }

    #[test]
    fn retries_transient_failures_then_succeeds() {
        let (store, project, ids, clock) = setup();
        let g = Gateway::with_provider(
            config(),
            Box::new(Flaky {
                calls: AtomicUsize::new(0),
                fail_first: 2,
                failure: || Failure::Transient("503".into()),
            }),
        )
        .unwrap();
        let ex = g.send(&store, &project.id, &prompt("x"), &ids, &clock).unwrap();
        assert_eq!(ex.response.unwrap().text, "ok");
        let t = store.read(|c| transcript(c, &project.id)).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].request.temperature, 0.0);
    }

    #[test]
    fn exhausted_timeouts_surface_as_provider_timeout() {
        let (store, project, ids, clock) = setup();
        let g = Gateway::with_provider(
            config(),
            Box::new(Flaky {
                calls: AtomicUsize::new(0),
                fail_first: 10,
                failure: || Failure::Timeout,
            }),
        )
        .unwrap();
        let err = g.send(&store, &project.id, &prompt("x"), &ids, &clock).unwrap_err();
        assert!(matches!(err, Error::ProviderTimeout { attempts: 3 }));
        // the request stays on record without a response
        let t = store.read(|c| transcript(c, &project.id)).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t[0].response.is_none());
    }

    #[test]
    fn fatal_errors_are_not_retried() {
        let (store, project, ids, clock) = setup();
        let flaky = Flaky {
            calls: AtomicUsize::new(0),
            fail_first: 10,
            failure: || Failure::Fatal(Error::Provider("invalid api key".into())),
        };
        let g = Gateway::with_provider(config(), Box::new(flaky)).unwrap();
        let err = g.send(&store, &project.id, &prompt("x"), &ids, &clock).unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Provider);
    }

    #[test]
    fn nonzero_temperature_cannot_be_stored() {
        let (store, project, ids, clock) = setup();
        let mut r = PromptRequest {
            id: RequestId::generate(&ids),
            project_id: project.id.clone(),
            composed_prompt: prompt("x"),
            model_id: "m".into(),
            temperature: 0.7,
            max_tokens: None,
            request_hash: Digest::of(b""),
            sent_at: clock.now(),
        };
        assert!(store.write(|c| insert_request(c, &r)).is_err());
        // the schema refuses it as well, even past the code check
        r.temperature = 0.0;
        store.write(|c| insert_request(c, &r)).unwrap();
        let err = store.write(|c| {
            c.execute("UPDATE prompt_requests SET temperature = 0.5", [])?;
            Ok(())
        });
        assert!(err.is_err());
        assert!(store.read(orphan_responses).unwrap().is_empty());
    }
}
