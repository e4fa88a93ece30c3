//! Request bodies and response decoding for OpenAI-compatible endpoints.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::ElicitError;

/// Probabilities, not samples, are the measurement.
pub const TEMPERATURE: f64 = 0.0;
pub const MAX_TOKENS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ApiKind {
    #[default]
    Completions,
    Chat,
}

impl ApiKind {
    pub fn path(self) -> &'static str {
        match self {
            Self::Completions => "/v1/completions",
            Self::Chat => "/v1/chat/completions",
        }
    }
}

impl std::str::FromStr for ApiKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "completions" => Ok(Self::Completions),
            "chat" => Ok(Self::Chat),
            other => Err(format!("unknown api '{other}' (expected completions or chat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    /// May be left out where the model is named elsewhere, as in run configs.
    #[serde(default)]
    pub model_name: String,
    #[serde(default)]
    pub api: ApiKind,
    #[serde(default = "default_top_logprobs")]
    pub top_logprobs: u32,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// First retry delay; doubles on every further attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_top_logprobs() -> u32 {
    5
}
fn default_timeout_secs() -> f64 {
    60.0
}
fn default_max_retries() -> u32 {
    4
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_max_tokens() -> u32 {
    MAX_TOKENS
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api: ApiKind::default(),
            top_logprobs: default_top_logprobs(),
            timeout_secs: default_timeout_secs(),
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_ms(),
            temperature: TEMPERATURE,
            max_tokens: MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), ElicitError> {
        let err = |m: String| Err(ElicitError::Config(m));
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return err(format!("base_url must be an http(s) URL, got {:?}", self.base_url));
        }
        if self.model_name.trim().is_empty() {
            return err("model_name must not be empty".into());
        }
        if self.top_logprobs < 2 {
            return err(format!("top_logprobs must be at least 2, got {}", self.top_logprobs));
        }
        if self.temperature != TEMPERATURE {
            return err(format!("temperature is fixed at 0, got {}", self.temperature));
        }
        if self.max_tokens != MAX_TOKENS {
            return err(format!("max_tokens is fixed at 1, got {}", self.max_tokens));
        }
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return err(format!("timeout_secs must be positive, got {}", self.timeout_secs));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn url(&self) -> String {
        format!("{}{}", self.base_url.trim_end_matches('/'), self.api.path())
    }

    /// Digest of the fields that shape the measurement. Host, timeout and
    /// retry settings are excluded: the same model behind another URL is the
    /// same measurement.
    pub fn digest(&self) -> String {
        let canonical = json!({
            "api": self.api,
            "model": self.model_name,
            "top_logprobs": self.top_logprobs,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

#[derive(Serialize)]
struct CompletionsRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    logprobs: u32,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    logprobs: bool,
    top_logprobs: u32,
}

pub fn completions_request_body(config: &EndpointConfig, prompt: &str) -> Vec<u8> {
    serde_json::to_vec(&CompletionsRequest {
        model: &config.model_name,
        prompt,
        temperature: TEMPERATURE,
        max_tokens: MAX_TOKENS,
        logprobs: config.top_logprobs,
    })
    .expect("request serializes")
}

pub fn chat_request_body(config: &EndpointConfig, prompt: &str) -> Vec<u8> {
    serde_json::to_vec(&ChatRequest {
        model: &config.model_name,
        messages: [ChatMessage { role: "user", content: prompt }],
        temperature: TEMPERATURE,
        max_tokens: MAX_TOKENS,
        logprobs: true,
        top_logprobs: config.top_logprobs,
    })
    .expect("request serializes")
}

pub fn request_body(config: &EndpointConfig, prompt: &str) -> Vec<u8> {
    match config.api {
        ApiKind::Completions => completions_request_body(config, prompt),
        ApiKind::Chat => chat_request_body(config, prompt),
    }
}

fn first_choice_logprobs(body: &[u8]) -> Result<Value, String> {
    let value: Value = serde_json::from_slice(body).map_err(|e| format!("response is not JSON: {e}"))?;
    let choice = value
        .get("choices")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .ok_or("response has no choices")?;
    match choice.get("logprobs") {
        Some(Value::Null) | None => Err("response lacks a logprobs field".into()),
        Some(lp) => Ok(lp.clone()),
    }
}

fn logprob_value(token: &str, v: &Value) -> Result<f64, String> {
    v.as_f64().ok_or_else(|| format!("logprob for token {token:?} is not a number"))
}

/// Reads `choices[0].logprobs.top_logprobs[0]`, a token → logprob object.
pub fn decode_completions_response(body: &[u8]) -> Result<Vec<(String, f64)>, String> {
    let logprobs = first_choice_logprobs(body)?;
    let top = logprobs
        .get("top_logprobs")
        .and_then(Value::as_array)
        .and_then(|t| t.first())
        .ok_or("logprobs has no top_logprobs entries")?;
    let map = top.as_object().ok_or("top_logprobs[0] is not an object")?;
    map.iter().map(|(token, v)| Ok((token.clone(), logprob_value(token, v)?))).collect()
}

/// Reads `choices[0].logprobs.content[0].top_logprobs`, a list of
/// `{token, logprob}` objects.
pub fn decode_chat_response(body: &[u8]) -> Result<Vec<(String, f64)>, String> {
    let logprobs = first_choice_logprobs(body)?;
    let top = logprobs
        .get("content")
        .and_then(Value::as_array)
        .and_then(|c| c.first())
        .and_then(|c| c.get("top_logprobs"))
        .and_then(Value::as_array)
        .ok_or("logprobs has no content[0].top_logprobs list")?;
    top.iter()
        .map(|entry| {
            let token = entry.get("token").and_then(Value::as_str).ok_or("top_logprobs entry lacks a token")?;
            let lp = entry.get("logprob").ok_or_else(|| format!("token {token:?} lacks a logprob"))?;
            Ok((token.to_string(), logprob_value(token, lp)?))
        })
        .collect()
}

pub fn decode_response(api: ApiKind, body: &[u8]) -> Result<Vec<(String, f64)>, String> {
    match api {
        ApiKind::Completions => decode_completions_response(body),
        ApiKind::Chat => decode_chat_response(body),
    }
}
