use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::Agent;

use crate::error::Error;
use crate::gateway::{Completion, Failure, Provider, ProviderRequest, TokenUsage};

/// OpenAI-compatible chat-completions client.
pub struct LiveProvider {
    agent: Agent,
    endpoint: String,
    credential: String,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireContent,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireContent {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u32>,
    completion_tokens: Option<u32>,
}

impl LiveProvider {
    pub fn new(endpoint: &str, credential: &str, timeout: Duration) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        LiveProvider {
            agent,
            endpoint: endpoint.to_string(),
            credential: credential.to_string(),
        }
    }
}

fn error_message(body: &str) -> String {
    #[derive(Deserialize)]
    struct Envelope {
        error: Inner,
    }
    #[derive(Deserialize)]
    struct Inner {
        message: String,
    }
    match serde_json::from_str::<Envelope>(body) {
        Ok(e) => e.error.message,
        Err(_) => body.chars().take(300).collect(),
    }
}

impl Provider for LiveProvider {
    fn complete(&self, request: &ProviderRequest<'_>) -> std::result::Result<Completion, Failure> {
        let body = WireRequest {
            model: request.model_id,
            messages: request
                .messages
                .iter()
                .map(|m| WireMessage {
                    role: m.role.as_str(),
                    content: &m.text,
                })
                .collect(),
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let result = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.credential))
            .send_json(&body);
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(Failure::Timeout),
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => return Err(Failure::Timeout),
            Err(ureq::Error::Io(e)) => return Err(Failure::Transient(format!("io: {e}"))),
            Err(e @ (ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)) => {
                return Err(Failure::Transient(e.to_string()))
            }
            Err(e) => return Err(Failure::Fatal(Error::Provider(e.to_string()))),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Err(Failure::Timeout),
            Err(e) => return Err(Failure::Transient(format!("reading body: {e}"))),
        };
        if status == 429 || status >= 500 {
            return Err(Failure::Transient(format!("HTTP {status}: {}", error_message(&text))));
        }
        if !(200..300).contains(&status) {
            return Err(Failure::Fatal(Error::Provider(format!("HTTP {status}: {}", error_message(&text)))));
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(Error::Provider(format!("unreadable completion: {e}"))))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| Failure::Fatal(Error::Provider("completion has no choices".into())))?;
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            usage: parsed
                .usage
                .map(|u| TokenUsage {
                    prompt: u.prompt_tokens,
                    completion: u.completion_tokens,
                })
                .unwrap_or_default(),
            finish_reason: choice.finish_reason.unwrap_or_else(|| "unknown".into()),
        })
    }
}
