//! Minimal OpenAI-compatible client: chat completions (with inline JPEG
//! attachments) and embeddings, retried on transport errors, 429 and 5xx.

use std::time::Duration;

use base64::Engine as _;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};

pub const ENV_API_BASE: &str = "SCRAPMEM_API_BASE";
pub const ENV_API_KEY: &str = "SCRAPMEM_API_KEY";
pub const ENV_MODEL: &str = "SCRAPMEM_MODEL";

#[derive(Debug, Clone)]
pub struct ApiConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub initial_backoff: Duration,
}

impl ApiConfig {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        ApiConfig {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }

    pub fn from_env() -> Result<Self> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| Error::Config(format!("{ENV_API_BASE} is not set (required for remote providers)")))?;
        let model = std::env::var(ENV_MODEL)
            .map_err(|_| Error::Config(format!("{ENV_MODEL} is not set (required for remote providers)")))?;
        let mut cfg = ApiConfig::new(base, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContentPart {
    Text(String),
    Jpeg(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: &'static str,
    pub content: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        ChatMessage {
            role: "system",
            content: vec![ContentPart::Text(text.into())],
        }
    }

    pub fn user(text: impl Into<String>) -> Self {
        ChatMessage {
            role: "user",
            content: vec![ContentPart::Text(text.into())],
        }
    }

    pub fn user_parts(content: Vec<ContentPart>) -> Self {
        ChatMessage { role: "user", content }
    }

    fn to_json(&self) -> Value {
        match self.content.as_slice() {
            [ContentPart::Text(t)] => json!({"role": self.role, "content": t}),
            parts => {
                let parts: Vec<Value> = parts
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text(t) => json!({"type": "text", "text": t}),
                        ContentPart::Jpeg(bytes) => json!({
                            "type": "image_url",
                            "image_url": {
                                "url": format!(
                                    "data:image/jpeg;base64,{}",
                                    base64::engine::general_purpose::STANDARD.encode(bytes)
                                )
                            }
                        }),
                    })
                    .collect();
                json!({"role": self.role, "content": parts})
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub max_tokens: Option<u32>,
    pub temperature: Option<f32>,
    pub timeout: Option<Duration>,
}

pub struct ChatClient {
    config: ApiConfig,
    http: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct EmbeddingsBody<'a> {
    model: &'a str,
    input: &'a [String],
}

impl ChatClient {
    pub fn new(config: ApiConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| Error::Provider {
                message: format!("http client: {e}"),
                attempts: 0,
            })?;
        Ok(ChatClient { config, http })
    }

    pub fn config(&self) -> &ApiConfig {
        &self.config
    }

    fn post(&self, endpoint: &str, body: &Value, timeout: Option<Duration>) -> Result<Value> {
        let url = format!("{}/{endpoint}", self.config.base_url);
        let mut backoff = self.config.initial_backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            let mut req = self.http.post(&url).json(body);
            if let Some(key) = &self.config.api_key {
                req = req.bearer_auth(key);
            }
            if let Some(t) = timeout {
                req = req.timeout(t);
            }
            let (retryable, message) = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp.json::<Value>().map_err(|e| Error::Provider {
                            message: format!("{endpoint}: malformed response body: {e}"),
                            attempts,
                        });
                    }
                    let text = resp.text().unwrap_or_default();
                    (
                        status.as_u16() == 429 || status.is_server_error(),
                        format!("{endpoint}: HTTP {status}: {}", text.chars().take(300).collect::<String>()),
                    )
                }
                Err(e) => (true, format!("{endpoint}: {e}")),
            };
            if !retryable || attempts > self.config.max_retries {
                return Err(Error::Provider { message, attempts });
            }
            log::warn!("{message}; retrying in {backoff:?}");
            std::thread::sleep(backoff);
            backoff *= 2;
        }
    }

    /// Sends a chat completion and returns the first choice's message content.
    pub fn complete(&self, request: &ChatRequest) -> Result<String> {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages.iter().map(ChatMessage::to_json).collect::<Vec<_>>(),
        });
        if let Some(m) = request.max_tokens {
            body["max_tokens"] = json!(m);
        }
        if let Some(t) = request.temperature {
            body["temperature"] = json!(t);
        }
        let resp = self.post("chat/completions", &body, request.timeout)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Reply("chat completion without choices[0].message.content".into()))
    }

    pub fn embeddings(&self, inputs: &[String]) -> Result<Vec<Vec<f32>>> {
        let body = serde_json::to_value(EmbeddingsBody {
            model: &self.config.model,
            input: inputs,
        })?;
        let resp = self.post("embeddings", &body, None)?;
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Reply("embeddings response without data".into()))?;
        if data.len() != inputs.len() {
            return Err(Error::Reply(format!(
                "asked for {} embeddings, got {}",
                inputs.len(),
                data.len()
            )));
        }
        let mut out = vec![Vec::new(); inputs.len()];
        for (pos, d) in data.iter().enumerate() {
            let idx = d.get("index").and_then(Value::as_u64).map(|i| i as usize).unwrap_or(pos);
            let v = d
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::Reply("embedding entry without vector".into()))?;
            let v: Option<Vec<f32>> = v.iter().map(|x| x.as_f64().map(|f| f as f32)).collect();
            *out.get_mut(idx).ok_or_else(|| Error::Reply(format!("embedding index {idx} out of range")))? =
                v.ok_or_else(|| Error::Reply("non-numeric embedding".into()))?;
        }
        Ok(out)
    }
}

/// Pulls a JSON object out of a model reply, tolerating code fences and surrounding prose.
pub fn extract_json_object(reply: &str) -> Result<serde_json::Map<String, Value>> {
    let trimmed = reply.trim();
    let candidate = match (trimmed.find('{'), trimmed.rfind('}')) {
        (Some(a), Some(b)) if b > a => &trimmed[a..=b],
        _ => return Err(Error::Reply(format!("no JSON object in reply: {}", snippet(trimmed)))),
    };
    match serde_json::from_str::<Value>(candidate) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::Reply("reply is not a JSON object".into())),
        Err(e) => Err(Error::Reply(format!("invalid JSON ({e}): {}", snippet(candidate)))),
    }
}

fn snippet(s: &str) -> String {
    s.chars().take(120).collect()
}
