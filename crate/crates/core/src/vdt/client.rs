//! Chat-completions client with retry and exponential backoff.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    pub base_url: String,
    pub path: String,
    pub model_id: String,
    /// Environment variable holding the bearer token; `None` sends no auth header.
    pub auth_env: Option<String>,
    pub temperature: f64,
    /// Extra attempts after the first, for both HTTP failures and malformed responses.
    pub max_retries: usize,
    pub timeout_secs: u64,
    /// Delay before retry `n` is `backoff_base_ms * 2^n`.
    pub backoff_base_ms: u64,
    /// Upper bound on concurrent class requests.
    pub max_in_flight: usize,
    /// Request body; string values `"$model"`, `"$messages"` and
    /// `"$temperature"` are replaced wherever they occur.
    pub payload_template: Value,
    /// JSON pointer to the reply text in the response body.
    pub response_pointer: String,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com".into(),
            path: "/v1/chat/completions".into(),
            model_id: "gpt-4".into(),
            auth_env: Some("OPENAI_API_KEY".into()),
            temperature: 0.0,
            max_retries: 3,
            timeout_secs: 120,
            backoff_base_ms: 1000,
            max_in_flight: 4,
            payload_template: json!({
                "model": "$model",
                "messages": "$messages",
                "temperature": "$temperature"
            }),
            response_pointer: "/choices/0/message/content".into(),
        }
    }
}

impl LlmEndpointConfig {
    pub fn url(&self) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), self.path.trim_start_matches('/'))
    }

    pub fn render_payload(&self, messages: &[ChatMessage]) -> Value {
        fn fill(v: &Value, model: &Value, messages: &Value, temperature: &Value) -> Value {
            match v {
                Value::String(s) if s == "$model" => model.clone(),
                Value::String(s) if s == "$messages" => messages.clone(),
                Value::String(s) if s == "$temperature" => temperature.clone(),
                Value::Array(items) => Value::Array(items.iter().map(|i| fill(i, model, messages, temperature)).collect()),
                Value::Object(map) => Value::Object(
                    map.iter()
                        .map(|(k, i)| (k.clone(), fill(i, model, messages, temperature)))
                        .collect(),
                ),
                other => other.clone(),
            }
        }
        fill(
            &self.payload_template,
            &json!(self.model_id),
            &json!(messages),
            &json!(self.temperature),
        )
    }

    fn token(&self) -> Result<Option<String>> {
        match &self.auth_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(t) if !t.is_empty() => Ok(Some(t)),
                _ => Err(Error::MissingCredential(var.clone())),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Sends one POST with a JSON body. Non-2xx statuses are replies, not errors.
pub trait ChatTransport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpReply>;
}

/// Blocking HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { agent }
    }
}

impl ChatTransport for HttpTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &str) -> Result<HttpReply> {
        let mut req = self.agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", format!("Bearer {token}"));
        }
        let mut resp = req.send(body).map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// Reply text and the number of HTTP attempts it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: usize,
}

pub struct LlmClient<T: ChatTransport> {
    cfg: LlmEndpointConfig,
    transport: T,
    token: Option<String>,
}

impl LlmClient<HttpTransport> {
    pub fn http(cfg: LlmEndpointConfig) -> Result<Self> {
        let transport = HttpTransport::new(Duration::from_secs(cfg.timeout_secs));
        Self::new(cfg, transport)
    }
}

impl<T: ChatTransport> LlmClient<T> {
    /// Reads the auth token from the environment once, up front.
    pub fn new(cfg: LlmEndpointConfig, transport: T) -> Result<Self> {
        let token = cfg.token()?;
        Ok(Self { cfg, transport, token })
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.cfg
    }

    fn backoff(&self, retry: usize) {
        let ms = self.cfg.backoff_base_ms.saturating_mul(1u64 << retry.min(16));
        if ms > 0 {
            std::thread::sleep(Duration::from_millis(ms));
        }
    }

    /// Sends `messages`, retrying 429, 5xx and transport failures.
    pub fn complete(&self, messages: &[ChatMessage]) -> Result<Completion> {
        let url = self.cfg.url();
        let body = self.cfg.render_payload(messages).to_string();
        let mut last = None;
        for attempt in 0..=self.cfg.max_retries {
            if attempt > 0 {
                self.backoff(attempt - 1);
            }
            let err = match self.transport.post_json(&url, self.token.as_deref(), &body) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let text = extract_text(&reply.body, &self.cfg.response_pointer)?;
                    return Ok(Completion {
                        text,
                        attempts: attempt + 1,
                    });
                }
                Ok(reply) if reply.status == 429 => Error::RateLimited { attempts: attempt + 1 },
                Ok(reply) if reply.status >= 500 => Error::Http {
                    status: reply.status,
                    body: reply.body,
                },
                Ok(reply) => {
                    return Err(Error::Http {
                        status: reply.status,
                        body: reply.body,
                    })
                }
                Err(e @ Error::Transport(_)) => e,
                Err(e) => return Err(e),
            };
            log::warn!("request attempt {} failed: {err}", attempt + 1);
            last = Some(err);
        }
        Err(last.expect("at least one attempt"))
    }
}

fn extract_text(body: &str, pointer: &str) -> Result<String> {
    let value: Value = serde_json::from_str(body)?;
    match value.pointer(pointer) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        _ => Err(Error::EmptyResponse),
    }
}
