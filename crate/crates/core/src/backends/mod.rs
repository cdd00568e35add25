//! Uniform model-access layer.
//!
//! Everything that talks to a language model goes through [`ModelBackend`]:
//! the OpenAI-compatible HTTP client ([`openai::OpenAiBackend`]), the
//! deterministic test double ([`mock::MockBackend`]), and the persistent
//! response cache wrapper ([`cache::CachedBackend`]).

pub mod cache;
pub mod mock;
pub mod openai;
pub mod parse;
pub mod template;

use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multi-sample requests are expanded client-side into independent requests
/// whose `sample_index` values differ; retries after unparseable responses
/// shift the index by this stride so they miss the cache entry of the
/// original attempt.
pub const RETRY_SAMPLE_STRIDE: u32 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// One model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    /// Requested completions; expanded client-side, so backends always see 1.
    pub n: u32,
    /// Disambiguates the samples of one logical multi-sample request in the
    /// cache; never sent over the wire.
    pub sample_index: u32,
    pub want_logprobs: bool,
}

impl GenerationRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        GenerationRequest {
            model: model.into(),
            messages,
            temperature: 0.0,
            top_k: None,
            n: 1,
            sample_index: 0,
            want_logprobs: false,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_top_k(mut self, top_k: Option<u32>) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn with_sample_index(mut self, sample_index: u32) -> Self {
        self.sample_index = sample_index;
        self
    }

    pub fn with_logprobs(mut self, want: bool) -> Self {
        self.want_logprobs = want;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::Domain("generation request needs n >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(Error::Domain(format!(
                "temperature {} must be >= 0",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub usage: TokenUsage,
    /// True when served from the response cache.
    #[serde(default)]
    pub cached: bool,
}

/// A reachable language model.
#[async_trait]
pub trait ModelBackend: Send + Sync {
    /// Stable identifier, part of every cache key.
    fn id(&self) -> &str;

    fn supports_logprobs(&self) -> bool {
        false
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse>;
}

/// Issue `count` independent samples of `base` with sample indices
/// `first_index .. first_index + count`, concurrently. Results come back
/// index-aligned regardless of completion order.
pub async fn generate_samples(
    backend: &dyn ModelBackend,
    base: &GenerationRequest,
    first_index: u32,
    count: u32,
) -> Vec<Result<GenerationResponse>> {
    let futures = (0..count).map(|i| {
        let req = base.clone().with_sample_index(first_index + i);
        async move { backend.generate(&req).await }
    });
    futures::future::join_all(futures).await
}

/// Shared handle to a backend plus the model name to request from it.
#[derive(Clone)]
pub struct ModelHandle {
    pub backend: Arc<dyn ModelBackend>,
    pub model: String,
}

impl ModelHandle {
    pub fn new(backend: Arc<dyn ModelBackend>, model: impl Into<String>) -> Self {
        ModelHandle {
            backend,
            model: model.into(),
        }
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> GenerationRequest {
        GenerationRequest::new(self.model.clone(), messages)
    }
}

impl std::fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelHandle")
            .field("backend", &self.backend.id())
            .field("model", &self.model)
            .finish()
    }
}
