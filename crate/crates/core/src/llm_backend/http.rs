//! Chat-completions client (OpenAI-compatible wire format).

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, BackendError, CompletionRequest, CompletionResponse};
use crate::batching::estimate_tokens;
use crate::retry::RetryPolicy;

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub token_limit: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
}

impl Default for HttpBackendConfig {
    fn default() -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.into(),
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            token_limit: 4096,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
        }
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    api_key: String,
    token_limit: usize,
    retry: RetryPolicy,
    id: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("token_limit", &self.token_limit)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    /// Reads the credential from `config.api_key_env`.
    pub fn from_env(config: &HttpBackendConfig) -> Result<Self, BackendError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| BackendError::Config(format!("environment variable {} is not set", config.api_key_env)))?;
        Ok(Self::with_key(config, key))
    }

    pub fn with_key(config: &HttpBackendConfig, api_key: impl Into<String>) -> Self {
        let agent_config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build();
        Self {
            agent: agent_config.into(),
            endpoint: config.endpoint.clone(),
            api_key: api_key.into(),
            token_limit: config.token_limit,
            retry: config.retry,
            id: format!("http:{}", config.endpoint),
        }
    }

    fn request_body(request: &CompletionRequest) -> Value {
        json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }

    fn post_once(&self, body: &str) -> Result<(u16, Option<String>, String), BackendError> {
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .map(String::from);
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok((status, retry_after, text))
    }

    fn attempt(&self, body: &str) -> Result<String, BackendError> {
        let (status, retry_after, text) = self.post_once(body)?;
        match status {
            200..=299 => Ok(text),
            401 | 403 => Err(BackendError::Auth(text)),
            429 => Err(BackendError::RateLimited {
                retry_after: retry_after
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .map(Duration::from_secs_f64),
            }),
            400 | 413 if is_context_overflow(&text) => Err(BackendError::ContextOverflow {
                estimated: 0,
                limit: self.token_limit,
            }),
            500..=599 => Err(BackendError::Transport(format!("HTTP {status}: {text}"))),
            _ => Err(BackendError::Api { status, body: text }),
        }
    }
}

fn is_context_overflow(body: &str) -> bool {
    body.contains("context_length_exceeded") || body.contains("maximum context length")
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        request.validate()?;
        let estimated = estimate_tokens(&request.prompt);
        if estimated > self.token_limit {
            return Err(BackendError::ContextOverflow {
                estimated,
                limit: self.token_limit,
            });
        }
        let body = Self::request_body(request).to_string();
        let started = Instant::now();
        let raw = self.retry.run(
            |_| self.attempt(&body),
            BackendError::is_retryable,
            |e| match e {
                BackendError::RateLimited { retry_after } => *retry_after,
                _ => None,
            },
        )?;
        let latency_ms = started.elapsed().as_millis() as u64;
        let json: Value = serde_json::from_str(&raw).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let text = json["choices"][0]["message"]["content"]
            .as_str()
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .ok_or_else(|| BackendError::MalformedResponse("no choices[0].message.content".into()))?
            .to_string();
        let usage = &json["usage"];
        Ok(CompletionResponse {
            input_tokens: usage["prompt_tokens"].as_u64().map_or(estimated, |n| n as usize),
            output_tokens: usage["completion_tokens"]
                .as_u64()
                .map_or_else(|| estimate_tokens(&text), |n| n as usize),
            text,
            backend_id: self.id.clone(),
            latency_ms,
        })
    }
}
