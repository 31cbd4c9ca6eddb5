use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::{CallError, Job, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::prompt::RenderedPrompt;

/// Provider family, which decides how the thinking switch is spelled.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    #[default]
    Generic,
    OpenAi,
    Gemini,
    Anthropic,
    Qwen,
    DeepSeek,
}

const THINKING_BUDGET_TOKENS: u64 = 4096;

/// Extra request fields that turn reasoning on or off for `provider`.
pub fn thinking_fields(provider: Provider, thinking: bool) -> Map<String, Value> {
    let mut m = Map::new();
    match provider {
        Provider::OpenAi => {
            m.insert("reasoning_effort".into(), json!(if thinking { "medium" } else { "none" }));
        }
        Provider::Gemini => {
            m.insert("reasoning_effort".into(), json!(if thinking { "high" } else { "none" }));
        }
        Provider::Anthropic => {
            if thinking {
                m.insert("thinking".into(), json!({"type": "enabled", "budget_tokens": THINKING_BUDGET_TOKENS}));
            }
        }
        Provider::Qwen => {
            m.insert("enable_thinking".into(), json!(thinking));
        }
        Provider::Generic | Provider::DeepSeek => {}
    }
    m
}

pub fn chat_request_body(config: &ModelConfig, prompt: &RenderedPrompt) -> Value {
    let mut messages = Vec::new();
    if !prompt.system_text.is_empty() {
        messages.push(json!({"role": "system", "content": prompt.system_text}));
    }
    messages.push(json!({"role": "user", "content": prompt.user_text}));
    let mut body = Map::new();
    body.insert("model".into(), json!(config.model_id.as_deref().unwrap_or(&config.name)));
    body.insert("messages".into(), Value::Array(messages));
    body.extend(thinking_fields(config.provider, config.thinking));
    Value::Object(body)
}

const CONTEXT_SIGNALS: &[&str] = &[
    "context length",
    "context_length",
    "maximum context",
    "too many tokens",
    "prompt is too long",
    "input is too long",
    "exceeds the context window",
    "token limit",
];

fn error_text(body: &Value) -> Option<(String, String)> {
    let err = body.get("error")?;
    let (code, message) = match err {
        Value::String(s) => (String::new(), s.clone()),
        Value::Object(o) => (
            o.get("code").or_else(|| o.get("type")).map(|c| c.to_string().trim_matches('"').to_owned()).unwrap_or_default(),
            o.get("message").and_then(Value::as_str).unwrap_or_default().to_owned(),
        ),
        other => (String::new(), other.to_string()),
    };
    Some((code, message))
}

fn is_context_error(code: &str, message: &str) -> bool {
    let lower = message.to_lowercase();
    code == "context_length_exceeded" || CONTEXT_SIGNALS.iter().any(|s| lower.contains(s))
}

fn message_content(body: &Value) -> std::result::Result<String, CallError> {
    let choice = body
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| CallError::Refused("response has no choices".into()))?;
    if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
        return Err(CallError::Refused("output withheld by content filter".into()));
    }
    match choice.get("message").and_then(|m| m.get("content")) {
        None | Some(Value::Null) => Ok(String::new()),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(Value::Array(parts)) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str).or_else(|| p.as_str()))
            .collect::<Vec<_>>()
            .join("")),
        Some(other) => Err(CallError::Refused(format!("unexpected content {other}"))),
    }
}

/// Maps an HTTP status and body to the response text or a call error.
pub fn classify_http_response(status: u16, body: &str) -> std::result::Result<String, CallError> {
    let parsed: Option<Value> = serde_json::from_str(body).ok();
    let err = parsed.as_ref().and_then(error_text);
    let snippet = || {
        let s: String = body.chars().take(300).collect();
        format!("HTTP {status}: {s}")
    };
    if let Some((code, message)) = &err {
        if is_context_error(code, message) {
            return Err(CallError::ContextLength(message.clone()));
        }
    } else if !(200..300).contains(&status) && is_context_error("", body) {
        return Err(CallError::ContextLength(snippet()));
    }
    match status {
        200..=299 => match (&parsed, err) {
            (_, Some((_, message))) => Err(CallError::Refused(message)),
            (Some(v), None) => message_content(v),
            (None, None) => Err(CallError::Transient(format!("unparseable body: {}", snippet()))),
        },
        408 | 409 | 425 | 429 | 500..=599 => Err(CallError::Transient(snippet())),
        400 | 413 | 422 => Err(CallError::Refused(snippet())),
        _ => Err(CallError::Fatal(snippet())),
    }
}

/// Client for an OpenAI-style `/chat/completions` endpoint.
pub struct OpenAiCompatible {
    config: ModelConfig,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiCompatible {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.endpoint.is_empty() {
            return Err(Error::arg(format!("model {} has no endpoint", config.name)));
        }
        let base = config.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_owned()
        } else {
            format!("{base}/chat/completions")
        };
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if api_key.is_none() {
            log::warn!("{} is not set; sending requests without a key", config.api_key_env);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.request_timeout_secs))
            .build()
            .map_err(|e| Error::arg(format!("http client: {e}")))?;
        Ok(Self { config, url, api_key, client })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }
}

impl Model for OpenAiCompatible {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn respond(&self, job: &Job) -> std::result::Result<String, CallError> {
        let mut req = self.client.post(&self.url).json(&chat_request_body(&self.config, &job.prompt));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| CallError::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| CallError::Transient(e.to_string()))?;
        classify_http_response(status, &body)
    }
}
