//! OpenAI-compatible chat-completions client.
//!
//! POSTs `{base_url}/v1/chat/completions` with a bearer token. Transient
//! transport failures and 5xx responses are retried with exponential backoff
//! (3 attempts); any 4xx is treated as a non-retryable configuration or auth
//! problem. In-flight requests are bounded by a semaphore (default 8).

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Semaphore;

use super::{GenerationRequest, GenerationResponse, ModelBackend, TokenUsage};
use crate::error::{Error, Result};

pub const API_KEY_ENV: &str = "CALIBRANT_API_KEY";
pub const BASE_URL_ENV: &str = "CALIBRANT_BASE_URL";

const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone)]
pub struct OpenAiOptions {
    pub base_url: Option<String>,
    pub api_key: Option<String>,
    /// Whether the server accepts a `top_k` field; when false the parameter
    /// is dropped from the wire body (and noted in the run log).
    pub top_k_supported: bool,
    pub supports_logprobs: bool,
    pub max_in_flight: usize,
    pub request_timeout: Duration,
    pub retry_base_delay: Duration,
}

impl Default for OpenAiOptions {
    fn default() -> Self {
        OpenAiOptions {
            base_url: None,
            api_key: None,
            top_k_supported: true,
            supports_logprobs: false,
            max_in_flight: 8,
            request_timeout: Duration::from_secs(120),
            retry_base_delay: Duration::from_millis(200),
        }
    }
}

pub struct OpenAiBackend {
    id: String,
    base_url: String,
    api_key: Option<String>,
    options: OpenAiOptions,
    http: reqwest::Client,
    in_flight: Arc<Semaphore>,
}

impl OpenAiBackend {
    /// Resolution order for the endpoint and key: explicit options, then the
    /// `CALIBRANT_BASE_URL` / `CALIBRANT_API_KEY` environment variables.
    pub fn new(id: impl Into<String>, options: OpenAiOptions) -> Result<Self> {
        let base_url = options
            .base_url
            .clone()
            .or_else(|| std::env::var(BASE_URL_ENV).ok())
            .ok_or_else(|| {
                Error::Config(format!(
                    "no base URL for OpenAI-compatible backend; set {BASE_URL_ENV} or configure base_url"
                ))
            })?;
        let api_key = options
            .api_key
            .clone()
            .or_else(|| std::env::var(API_KEY_ENV).ok());
        let http = reqwest::Client::builder()
            .timeout(options.request_timeout)
            .build()
            .map_err(|e| Error::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(OpenAiBackend {
            id: id.into(),
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key,
            in_flight: Arc::new(Semaphore::new(options.max_in_flight.max(1))),
            options,
            http,
        })
    }

    fn body(&self, req: &GenerationRequest) -> serde_json::Value {
        let mut body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
        });
        if let Some(top_k) = req.top_k {
            if self.options.top_k_supported {
                body["top_k"] = json!(top_k);
            } else {
                tracing::debug!(backend = %self.id, top_k, "server lacks top_k; dropping");
            }
        }
        if req.want_logprobs {
            body["logprobs"] = json!(true);
        }
        body
    }

    async fn attempt(&self, body: &serde_json::Value) -> std::result::Result<WireResponse, Retry> {
        let url = format!("{}/v1/chat/completions", self.base_url);
        let mut request = self.http.post(&url).json(body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| {
            if e.is_timeout() || e.is_connect() || e.is_request() {
                Retry::Transient(format!("{e}"))
            } else {
                Retry::Fatal(Error::Transport(format!("{e}")))
            }
        })?;
        let status = response.status();
        if status.is_server_error() {
            return Err(Retry::Transient(format!("HTTP {status}")));
        }
        if status.is_client_error() {
            let detail = response.text().await.unwrap_or_default();
            return Err(Retry::Fatal(Error::Config(format!(
                "backend '{}' rejected the request: HTTP {status}: {}",
                self.id,
                detail.chars().take(300).collect::<String>()
            ))));
        }
        response
            .json::<WireResponse>()
            .await
            .map_err(|e| Retry::Fatal(Error::Backend(format!("unreadable response body: {e}"))))
    }
}

enum Retry {
    Transient(String),
    Fatal(Error),
}

#[async_trait]
impl ModelBackend for OpenAiBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn supports_logprobs(&self) -> bool {
        self.options.supports_logprobs
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        req.validate()?;
        if req.want_logprobs && !self.options.supports_logprobs {
            return Err(Error::Capability("token logprobs".into()));
        }
        let _permit = self
            .in_flight
            .acquire()
            .await
            .expect("in-flight semaphore closed");
        let body = self.body(req);
        let mut last_transient = String::new();
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                let delay = self.options.retry_base_delay * 2u32.pow(attempt - 1);
                tokio::time::sleep(delay).await;
            }
            match self.attempt(&body).await {
                Ok(wire) => return wire.into_response(req),
                Err(Retry::Fatal(e)) => return Err(e),
                Err(Retry::Transient(msg)) => {
                    tracing::warn!(backend = %self.id, attempt, %msg, "transient backend failure");
                    last_transient = msg;
                }
            }
        }
        Err(Error::Transport(format!(
            "backend '{}' failed after {MAX_ATTEMPTS} attempts: {last_transient}",
            self.id
        )))
    }
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Vec<WireTokenLogprob>,
}

#[derive(Debug, Deserialize)]
struct WireTokenLogprob {
    logprob: f64,
}

#[derive(Debug, Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u32,
    #[serde(default)]
    completion_tokens: u32,
}

impl WireResponse {
    fn into_response(mut self, req: &GenerationRequest) -> Result<GenerationResponse> {
        if self.choices.is_empty() {
            return Err(Error::Backend("response carried no choices".into()));
        }
        let choice = self.choices.swap_remove(0);
        let token_logprobs = match (req.want_logprobs, choice.logprobs) {
            (true, Some(lp)) if !lp.content.is_empty() => {
                Some(lp.content.into_iter().map(|t| t.logprob).collect())
            }
            (true, _) => return Err(Error::Capability("token logprobs".into())),
            (false, _) => None,
        };
        let usage = self.usage.unwrap_or_default();
        Ok(GenerationResponse {
            text: choice.message.content,
            token_logprobs,
            usage: TokenUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
            cached: false,
        })
    }
}
