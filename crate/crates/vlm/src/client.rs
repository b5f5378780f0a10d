//! Chat-completions client abstraction.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Result, VlmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Part {
    Text { text: String },
    /// Base64 PNG.
    Image { png: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: Vec<Part>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            content: vec![Part::Text { text: text.into() }],
        }
    }

    pub fn with_image(mut self, png_base64: String) -> Self {
        self.content.push(Part::Image { png: png_base64 });
        self
    }

    pub fn joined_text(&self) -> String {
        self.content
            .iter()
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub top_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub sampling: Sampling,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.messages.iter().flat_map(|m| {
            m.content.iter().filter_map(|p| match p {
                Part::Image { png } => Some(png.as_str()),
                Part::Text { .. } => None,
            })
        })
    }

    pub fn last_user_text(&self) -> String {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(Message::joined_text)
            .unwrap_or_default()
    }

    pub fn all_text(&self) -> String {
        self.messages.iter().map(Message::joined_text).collect::<Vec<_>>().join("\n")
    }
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        (**self).complete(request)
    }
}

impl<C: ChatClient + ?Sized> ChatClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatClientConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_retries: usize,
    pub timeout_s: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Sampling used on retry 1, 2, ...; the last rung repeats if retries outlast it.
    #[serde(default)]
    pub escalation: Vec<Sampling>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_token_env() -> String {
    "MIRAGE_CHAT_TOKEN".into()
}

impl Default for ChatClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "qwen3-vl".into(),
            temperature: 0.2,
            top_p: 0.9,
            max_retries: 3,
            timeout_s: 120,
            max_tokens: default_max_tokens(),
            escalation: vec![
                Sampling { temperature: 0.5, top_p: 0.95 },
                Sampling { temperature: 0.8, top_p: 0.98 },
                Sampling { temperature: 1.0, top_p: 1.0 },
            ],
            token_env: default_token_env(),
        }
    }
}

impl ChatClientConfig {
    pub fn validate(&self) -> Result<()> {
        if self.escalation.len() > self.max_retries {
            return Err(VlmError::Config(format!(
                "escalation ladder has {} rungs but max_retries is {}",
                self.escalation.len(),
                self.max_retries
            )));
        }
        let ok = |s: Sampling| s.temperature >= 0.0 && (0.0..=1.0).contains(&s.top_p) && s.top_p > 0.0;
        if !ok(self.base_sampling()) || !self.escalation.iter().copied().all(ok) {
            return Err(VlmError::Config("temperature must be ≥ 0 and top_p in (0, 1]".into()));
        }
        if self.model.trim().is_empty() {
            return Err(VlmError::Config("model name is empty".into()));
        }
        Ok(())
    }

    pub fn base_sampling(&self) -> Sampling {
        Sampling {
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }

    /// Sampling for attempt `n` (0 is the first call).
    pub fn sampling_for_attempt(&self, n: usize) -> Sampling {
        if n == 0 || self.escalation.is_empty() {
            return self.base_sampling();
        }
        self.escalation[(n - 1).min(self.escalation.len() - 1)]
    }
}

/// Chat-completions over HTTP. The token is read from the environment on
/// construction and never logged.
pub struct HttpChatClient {
    config: ChatClientConfig,
    agent: ureq::Agent,
    token: Option<String>,
}

impl std::fmt::Debug for HttpChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatClient")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpChatClient {
    pub fn new(config: ChatClientConfig) -> Result<Self> {
        config.validate()?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_s)))
            .build()
            .into();
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Ok(Self { config, agent, token })
    }

    pub fn config(&self) -> &ChatClientConfig {
        &self.config
    }

    pub fn wire_body(request: &ChatRequest) -> Value {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                let content: Vec<Value> = m
                    .content
                    .iter()
                    .map(|p| match p {
                        Part::Text { text } => json!({ "type": "text", "text": text }),
                        Part::Image { png } => json!({
                            "type": "image_url",
                            "image_url": { "url": format!("data:image/png;base64,{png}") }
                        }),
                    })
                    .collect();
                json!({ "role": m.role, "content": content })
            })
            .collect();
        json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.sampling.temperature,
            "top_p": request.sampling.top_p,
            "max_tokens": request.max_tokens,
        })
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        log::debug!(
            "chat request to {} (model {}, temperature {}, top_p {})",
            self.config.endpoint,
            request.model,
            request.sampling.temperature,
            request.sampling.top_p
        );
        let mut resp = req
            .send_json(Self::wire_body(request))
            .map_err(|e| VlmError::Transport(format!("{}: {e}", self.config.endpoint)))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| VlmError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(VlmError::Status { status, body: text });
        }
        let v: Value = serde_json::from_str(&text)
            .map_err(|e| VlmError::Transport(format!("response is not JSON: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| VlmError::Transport("response has no choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escalation_longer_than_budget_rejected() {
        let cfg = ChatClientConfig {
            max_retries: 1,
            ..ChatClientConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(VlmError::Config(_))));
        assert!(ChatClientConfig::default().validate().is_ok());
    }

    #[test]
    fn ladder_is_consumed_in_order() {
        let cfg = ChatClientConfig::default();
        assert_eq!(cfg.sampling_for_attempt(0), cfg.base_sampling());
        assert_eq!(cfg.sampling_for_attempt(1), cfg.escalation[0]);
        assert_eq!(cfg.sampling_for_attempt(3), cfg.escalation[2]);
        assert_eq!(cfg.sampling_for_attempt(9), cfg.escalation[2]);
    }

    #[test]
    fn wire_body_uses_chat_completions_layout() {
        let req = ChatRequest {
            model: "m".into(),
            messages: vec![Message::text(Role::User, "hi").with_image("AAAA".into())],
            sampling: Sampling { temperature: 0.1, top_p: 0.5 },
            max_tokens: 7,
        };
        let body = HttpChatClient::wire_body(&req);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,AAAA");
        assert_eq!(body["max_tokens"], 7);
    }

    #[test]
    fn debug_redacts_token() {
        let mut c = HttpChatClient::new(ChatClientConfig::default()).unwrap();
        c.token = Some("secret-value".into());
        assert!(!format!("{c:?}").contains("secret-value"));
    }
}
