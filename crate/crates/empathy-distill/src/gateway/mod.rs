//! Uniform client for teacher and judge models.
//!
//! One request shape (chat-completions-style JSON) covers every provider kind:
//!
//! - [`http::HttpTransport`] talks to an OpenAI-compatible HTTP endpoint with
//!   bearer-token auth, exponential-backoff retries on transient statuses, and
//!   a sliding-minute rate limit.
//! - [`replay::ReplayTransport`] serves completions from a warm cache
//!   directory and never touches the network.
//! - [`replay::ScriptTransport`] serves completions from an in-memory map,
//!   for tests and offline examples.
//!
//! Every live completion is written to a content-addressed cache keyed by
//! (model, messages, temperature, seed); identical requests are served from
//! the cache afterwards, which is what makes warm-cache pipeline runs byte
//! reproducible.

mod cache;
mod http;
mod limit;
mod replay;

pub use cache::{CacheEntry, ResponseCache};
pub use http::HttpTransport;
pub use limit::RateLimiter;
pub use replay::{ReplayScript, ReplayTransport, ScriptTransport};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompt::RenderedPrompt;

/// Message role in a chat-completions request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One chat message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// Generation parameters shared by a family of requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl GenParams {
    /// Defaults for response generation: some diversity, bounded length.
    pub fn generation(model: impl Into<String>) -> GenParams {
        GenParams {
            model: model.into(),
            temperature: 0.7,
            max_tokens: 256,
            seed: None,
        }
    }

    /// Defaults for judging: deterministic, short replies.
    pub fn judging(model: impl Into<String>) -> GenParams {
        GenParams {
            model: model.into(),
            temperature: 0.0,
            max_tokens: 8,
            seed: None,
        }
    }
}

/// A single completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
}

/// The cache-key fields: max_tokens is deliberately not part of the identity.
#[derive(Serialize)]
struct RequestKey<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    seed: Option<u64>,
}

impl CompletionRequest {
    /// Builds a request from a rendered prompt; the system preamble, when
    /// present, becomes a system message.
    pub fn from_prompt(params: &GenParams, prompt: &RenderedPrompt) -> CompletionRequest {
        let mut messages = Vec::new();
        if let Some(preamble) = &prompt.system_preamble {
            messages.push(ChatMessage::system(preamble.clone()));
        }
        messages.push(ChatMessage::user(prompt.user_message.clone()));
        CompletionRequest {
            model: params.model.clone(),
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            seed: params.seed,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model.trim().is_empty() {
            return Err(GatewayError::InvalidRequest {
                detail: "empty model name".to_string(),
            });
        }
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest {
                detail: "request has no user message".to_string(),
            });
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest {
                detail: format!("temperature {} is not a finite non-negative number", self.temperature),
            });
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest {
                detail: "max_tokens must be positive".to_string(),
            });
        }
        Ok(())
    }

    /// Content address of this request: sha256 over (model, messages,
    /// temperature, seed).
    pub fn cache_key(&self) -> String {
        let key = RequestKey {
            model: &self.model,
            messages: &self.messages,
            temperature: self.temperature,
            seed: self.seed,
        };
        let canonical = serde_json::to_vec(&key).expect("request key serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

/// Prompt and completion token counts as reported by the provider.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt: u64,
    pub completion: u64,
}

/// A completed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    pub model: String,
    pub token_usage: TokenUsage,
    /// True when served from the response cache or a replay provider.
    pub cached: bool,
    pub latency_ms: u64,
    /// Outbound attempts made for this result; 0 on a cache hit.
    pub attempts: u32,
}

/// What a transport returns on success.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportReply {
    pub text: String,
    pub usage: TokenUsage,
}

/// A backend that can execute one completion request.
pub trait Transport: Send + Sync {
    fn send(&self, request: &CompletionRequest) -> Result<TransportReply, GatewayError>;

    /// Replay backends never reach the network; their replies count as cached.
    fn is_replay(&self) -> bool {
        false
    }

    fn description(&self) -> String;
}

/// Provider kind selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    HttpChat,
    Replay,
}

/// Declarative provider configuration, usually a `[provider.<name>]` section
/// of a TOML config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub base_url: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// is read at construction time and never stored in this struct.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub credential_env: Option<String>,
    /// Outbound requests allowed per sliding minute; 0 disables limiting.
    #[serde(default = "default_rate_limit")]
    pub rate_limit: u32,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_rate_limit() -> u32 {
    60
}

fn default_max_retries() -> u32 {
    3
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.kind {
            ProviderKind::HttpChat => {
                if self.base_url.is_none() {
                    return Err(GatewayError::InvalidConfig {
                        detail: "http_chat provider requires base_url".to_string(),
                    });
                }
                if self.credential_env.is_none() {
                    return Err(GatewayError::InvalidConfig {
                        detail: "http_chat provider requires credential_env".to_string(),
                    });
                }
            }
            ProviderKind::Replay => {
                if self.cache_dir.is_none() {
                    return Err(GatewayError::InvalidConfig {
                        detail: "replay provider requires cache_dir".to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct ProviderFile {
    provider: BTreeMap<String, ProviderConfig>,
}

/// Loads every `[provider.<name>]` section from a TOML config file.
pub fn load_provider_configs(path: &Path) -> Result<BTreeMap<String, ProviderConfig>, GatewayError> {
    let raw = std::fs::read_to_string(path).map_err(|source| GatewayError::CacheIo {
        path: path.to_path_buf(),
        source,
    })?;
    let file: ProviderFile = toml::from_str(&raw).map_err(|e| GatewayError::InvalidConfig {
        detail: format!("{}: {e}", path.display()),
    })?;
    for config in file.provider.values() {
        config.validate()?;
    }
    Ok(file.provider)
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {detail}")]
    InvalidRequest { detail: String },
    #[error("invalid provider config: {detail}")]
    InvalidConfig { detail: String },
    #[error("credential environment variable {var} is not set")]
    MissingCredential { var: String },
    #[error("authentication failed against {provider} (status {status})")]
    Auth { provider: String, status: u16 },
    #[error("transient provider failure (status {status}): {detail}")]
    Transient { status: u16, detail: String },
    #[error("gave up after {attempts} attempts: {detail}")]
    RetriesExhausted { attempts: u32, detail: String },
    #[error("malformed provider response: {detail}")]
    MalformedResponse { detail: String },
    #[error("http request failed: {detail}")]
    Http { detail: String },
    #[error("replay cache miss for model {model}, request {key}")]
    ReplayMiss { model: String, key: String },
    #[error("offline mode forbids network and the cache has no entry for request {key}")]
    OfflineMiss { key: String },
    #[error("cache i/o at {path}: {source}")]
    CacheIo {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("chain stage {stage} failed after {} completed stages: {source}", completed.len())]
    ChainStage {
        /// 1-based index of the failed stage.
        stage: usize,
        /// Outputs of the stages that completed before the failure.
        completed: Vec<String>,
        source: Box<GatewayError>,
    },
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transient { .. })
    }
}

/// Retry schedule for transient failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: default_max_retries(),
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        self.base_delay.saturating_mul(2u32.saturating_pow(attempt.saturating_sub(1)))
    }
}

/// Bounded in-flight window shared by all callers of one gateway.
struct Window {
    permits: Mutex<usize>,
    freed: Condvar,
}

impl Window {
    fn new(size: usize) -> Window {
        Window {
            permits: Mutex::new(size.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> WindowGuard<'_> {
        let mut permits = self.permits.lock().expect("window lock");
        while *permits == 0 {
            permits = self.freed.wait(permits).expect("window wait");
        }
        *permits -= 1;
        WindowGuard { window: self }
    }
}

struct WindowGuard<'a> {
    window: &'a Window,
}

impl Drop for WindowGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.window.permits.lock().expect("window lock");
        *permits += 1;
        self.window.freed.notify_one();
    }
}

/// Default bounded in-flight window size.
pub const DEFAULT_WINDOW: usize = 4;

/// The uniform completion client: transport + cache + rate limit + retries.
pub struct Gateway {
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    limiter: Option<RateLimiter>,
    retry: RetryPolicy,
    window: Window,
    offline: bool,
    provider_name: String,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("provider", &self.provider_name)
            .field("transport", &self.transport.description())
            .field("offline", &self.offline)
            .finish()
    }
}

impl Gateway {
    /// Builds a gateway from a validated provider config.
    pub fn from_config(name: &str, config: &ProviderConfig) -> Result<Gateway, GatewayError> {
        config.validate()?;
        match config.kind {
            ProviderKind::HttpChat => {
                let var = config.credential_env.as_deref().expect("validated");
                let key = std::env::var(var).map_err(|_| GatewayError::MissingCredential {
                    var: var.to_string(),
                })?;
                let transport = HttpTransport::new(
                    config.base_url.as_deref().expect("validated"),
                    key,
                    name.to_string(),
                );
                let cache_dir = config
                    .cache_dir
                    .clone()
                    .unwrap_or_else(|| PathBuf::from("cache"));
                Ok(Gateway {
                    transport: Arc::new(transport),
                    cache: Some(ResponseCache::new(cache_dir)),
                    limiter: (config.rate_limit > 0).then(|| RateLimiter::per_minute(config.rate_limit)),
                    retry: RetryPolicy {
                        max_retries: config.max_retries,
                        ..RetryPolicy::default()
                    },
                    window: Window::new(DEFAULT_WINDOW),
                    offline: false,
                    provider_name: name.to_string(),
                })
            }
            ProviderKind::Replay => {
                let dir = config.cache_dir.clone().expect("validated");
                Ok(Gateway {
                    transport: Arc::new(ReplayTransport::new(ResponseCache::new(dir))),
                    cache: None,
                    limiter: None,
                    retry: RetryPolicy::default(),
                    window: Window::new(DEFAULT_WINDOW),
                    offline: true,
                    provider_name: name.to_string(),
                })
            }
        }
    }

    /// Wraps an arbitrary transport with no cache or rate limit. Used for
    /// scripted replay providers and fault-injection tests.
    pub fn with_transport(transport: Arc<dyn Transport>) -> Gateway {
        Gateway {
            transport,
            cache: None,
            limiter: None,
            retry: RetryPolicy::default(),
            window: Window::new(DEFAULT_WINDOW),
            offline: false,
            provider_name: "custom".to_string(),
        }
    }

    /// A gateway serving completions from an in-memory script.
    pub fn replay(script: ReplayScript) -> Gateway {
        Gateway::with_transport(Arc::new(script.into_transport()))
    }

    pub fn with_cache(mut self, cache_dir: impl Into<PathBuf>) -> Gateway {
        self.cache = Some(ResponseCache::new(cache_dir.into()));
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Gateway {
        self.retry = retry;
        self
    }

    pub fn with_rate_limiter(mut self, limiter: RateLimiter) -> Gateway {
        self.limiter = Some(limiter);
        self
    }

    pub fn with_window(mut self, size: usize) -> Gateway {
        self.window = Window::new(size);
        self
    }

    /// Forbids network use: any request not answerable from cache or replay
    /// fails instead of going out.
    pub fn offline(mut self, offline: bool) -> Gateway {
        self.offline = offline;
        self
    }

    pub fn provider_name(&self) -> &str {
        &self.provider_name
    }

    /// Executes one request: cache lookup, then the transport with rate
    /// limiting and exponential-backoff retries on transient failures.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, GatewayError> {
        request.validate()?;

        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.lookup(request)? {
                return Ok(CompletionResult {
                    text: entry.text,
                    model: request.model.clone(),
                    token_usage: entry.usage,
                    cached: true,
                    latency_ms: 0,
                    attempts: 0,
                });
            }
        }

        if self.offline && !self.transport.is_replay() {
            return Err(GatewayError::OfflineMiss {
                key: request.cache_key(),
            });
        }

        let _guard = self.window.acquire();
        let mut attempts = 0u32;
        let reply = loop {
            attempts += 1;
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let started = Instant::now();
            match self.transport.send(request) {
                Ok(reply) => break (reply, started.elapsed()),
                Err(error) if error.is_transient() && attempts <= self.retry.max_retries => {
                    let delay = self.retry.backoff(attempts);
                    log::warn!(
                        "transient failure from {} (attempt {attempts}): {error}; retrying in {delay:?}",
                        self.provider_name
                    );
                    std::thread::sleep(delay);
                }
                Err(error) if error.is_transient() => {
                    return Err(GatewayError::RetriesExhausted {
                        attempts,
                        detail: error.to_string(),
                    });
                }
                Err(error) => return Err(error),
            }
        };
        let (reply, elapsed) = reply;

        if let Some(cache) = &self.cache {
            cache.store(request, &reply)?;
        }

        let replayed = self.transport.is_replay();
        Ok(CompletionResult {
            text: reply.text,
            model: request.model.clone(),
            token_usage: reply.usage,
            cached: replayed,
            latency_ms: if replayed { 0 } else { elapsed.as_millis() as u64 },
            attempts,
        })
    }

    /// Runs a staged prompt chain: stage k's completion is spliced into stage
    /// k+1's response slot. Returns every stage's output in order. A failure
    /// aborts the chain and reports the 1-based failed stage along with the
    /// outputs completed so far.
    pub fn complete_chain<F>(
        &self,
        params: &GenParams,
        prompts: &[RenderedPrompt],
        splice: F,
    ) -> Result<Vec<String>, GatewayError>
    where
        F: Fn(&RenderedPrompt, &str) -> RenderedPrompt,
    {
        for (index, prompt) in prompts.iter().enumerate() {
            if prompt.stage_index != index {
                return Err(GatewayError::InvalidRequest {
                    detail: format!(
                        "chain prompts out of order: position {index} has stage_index {}",
                        prompt.stage_index
                    ),
                });
            }
        }
        let mut outputs: Vec<String> = Vec::with_capacity(prompts.len());
        for (index, prompt) in prompts.iter().enumerate() {
            let prompt = match outputs.last() {
                Some(previous) if index > 0 => splice(prompt, previous),
                _ => prompt.clone(),
            };
            let request = CompletionRequest::from_prompt(params, &prompt);
            match self.complete(&request) {
                Ok(result) => outputs.push(result.text),
                Err(error) => {
                    return Err(GatewayError::ChainStage {
                        stage: index + 1,
                        completed: outputs,
                        source: Box::new(error),
                    })
                }
            }
        }
        Ok(outputs)
    }
}
