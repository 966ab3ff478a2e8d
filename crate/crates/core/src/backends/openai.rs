//! Blocking client for OpenAI-compatible `/chat/completions` and `/embeddings`.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::warn;

use super::{BackendError, ChatBackend, ChatRequest, EmbedKind, Embedder, EmbeddingVector, Role};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LiveSettings {
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub embedding_dim: usize,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// First backoff delay; doubles after each retry.
    pub backoff_ms: u64,
}

impl Default for LiveSettings {
    fn default() -> Self {
        LiveSettings {
            base_url: "https://api.openai.com/v1".into(),
            chat_model: "gpt-3.5-turbo".into(),
            embedding_model: "text-embedding-ada-002".into(),
            embedding_dim: 1536,
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60.0,
            max_retries: 3,
            backoff_ms: 500,
        }
    }
}

pub struct OpenAiClient {
    settings: LiveSettings,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl OpenAiClient {
    pub fn from_settings(settings: &LiveSettings) -> Result<Self> {
        let api_key = std::env::var(&settings.api_key_env).ok().filter(|k| !k.is_empty());
        Self::new(settings.clone(), api_key)
    }

    pub fn new(settings: LiveSettings, api_key: Option<String>) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(settings.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(OpenAiClient { settings, api_key, http })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.settings.base_url.trim_end_matches('/'), path)
    }

    fn post_once(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, BackendError> {
        let mut req = self.http.post(self.url(path)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if status == 429 {
            return Err(BackendError::RateLimited(text));
        }
        if !(200..300).contains(&status) {
            return Err(BackendError::Http { status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(format!("{e}: {text}")))
    }

    fn post(&self, path: &str, body: &serde_json::Value) -> Result<serde_json::Value, BackendError> {
        let mut delay = Duration::from_millis(self.settings.backoff_ms);
        let mut attempt = 0;
        loop {
            match self.post_once(path, body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.settings.max_retries => {
                    attempt += 1;
                    warn!(path, attempt, error = %e, "retrying request");
                    thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Maps agent-side roles onto the wire roles. The last message always comes
/// from the counterpart, so its side becomes `user` and the other side
/// becomes `assistant`.
fn wire_messages(req: &ChatRequest) -> Vec<serde_json::Value> {
    let counterpart = req.messages.last().map(|m| m.role).unwrap_or(Role::InstructorSide);
    let mut out = Vec::with_capacity(req.messages.len() + 1);
    if !req.system_prompt.is_empty() {
        out.push(json!({"role": "system", "content": req.system_prompt}));
    }
    for m in &req.messages {
        let role = if m.role == counterpart { "user" } else { "assistant" };
        out.push(json!({"role": role, "content": m.text}));
    }
    out
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl ChatBackend for OpenAiClient {
    fn name(&self) -> &str {
        "openai"
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": self.settings.chat_model,
            "messages": wire_messages(req),
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        });
        let value = self.post("chat/completions", &body)?;
        let parsed: ChatCompletion =
            serde_json::from_value(value).map_err(|e| BackendError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Malformed("no message content in first choice".into()))
    }
}

impl Embedder for OpenAiClient {
    fn fingerprint(&self) -> String {
        format!("openai:{}:dim={}", self.settings.embedding_model, self.settings.embedding_dim)
    }

    fn dimension(&self) -> usize {
        self.settings.embedding_dim
    }

    fn embed(&self, text: &str, _kind: EmbedKind) -> Result<EmbeddingVector, BackendError> {
        if text.is_empty() {
            return Ok(EmbeddingVector::zeros(self.settings.embedding_dim));
        }
        let body = json!({"model": self.settings.embedding_model, "input": text});
        let value = self.post("embeddings", &body)?;
        let parsed: EmbeddingResponse =
            serde_json::from_value(value).map_err(|e| BackendError::Malformed(e.to_string()))?;
        let raw = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Malformed("empty embedding data".into()))?
            .embedding;
        if raw.len() != self.settings.embedding_dim {
            return Err(BackendError::Malformed(format!(
                "expected {} dimensions, got {}",
                self.settings.embedding_dim,
                raw.len()
            )));
        }
        Ok(EmbeddingVector::normalized(raw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::ChatMessage;

    #[test]
    fn counterpart_becomes_user() {
        let req = ChatRequest::new(
            "sys",
            vec![
                ChatMessage { role: Role::InstructorSide, text: "a".into() },
                ChatMessage { role: Role::AssistantSide, text: "b".into() },
            ],
            0.2,
            10,
        )
        .unwrap();
        let msgs = wire_messages(&req);
        assert_eq!(msgs[0]["role"], "system");
        assert_eq!(msgs[1]["role"], "assistant");
        assert_eq!(msgs[2]["role"], "user");
    }
}
