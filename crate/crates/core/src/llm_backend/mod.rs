//! Chat-completion backends: a remote HTTP backend and a deterministic
//! extractive mock used for offline runs and tests.

mod http;
mod mock;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use http::{HttpBackend, HttpBackendConfig, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT};
pub use mock::{mock_complete, MockBackend};

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("prompt of ~{estimated} tokens exceeds the {limit}-token context")]
    ContextOverflow { estimated: usize, limit: usize },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP {status}: {body}")]
    Api { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("prompt not in the expected template shape: {0}")]
    UnparseablePrompt(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::RateLimited { .. } | BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: usize,
}

impl CompletionRequest {
    /// Temperature 0 request.
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>, max_output_tokens: usize) -> Self {
        Self {
            model_id: model_id.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_output_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(BackendError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub input_tokens: usize,
    pub output_tokens: usize,
    pub backend_id: String,
    pub latency_ms: u64,
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, BackendError> {
        (**self).complete(request)
    }
}
