//! Chat-completions HTTP transport.
//!
//! Speaks the de-facto wire shape `POST <base>/chat/completions` with
//! `{model, messages, temperature, max_tokens, seed}` and reads
//! `choices[0].message.content` plus usage counts back. One adapter covers
//! OpenAI-style endpoints and the compatibility endpoints of the other
//! teacher families.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, CompletionRequest, GatewayError, TokenUsage, Transport, TransportReply};

pub struct HttpTransport {
    endpoint: String,
    api_key: String,
    provider: String,
    client: reqwest::blocking::Client,
}

// Manual Debug so the key can never leak through debug formatting.
impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("endpoint", &self.endpoint)
            .field("provider", &self.provider)
            .finish()
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: String, provider: String) -> HttpTransport {
        let trimmed = base_url.trim_end_matches('/');
        let endpoint = if trimmed.ends_with("/chat/completions") {
            trimmed.to_string()
        } else {
            format!("{trimmed}/chat/completions")
        };
        HttpTransport {
            endpoint,
            api_key,
            provider,
            client: reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(120))
                .build()
                .expect("http client builds"),
        }
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &CompletionRequest) -> Result<TransportReply, GatewayError> {
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
        };
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| {
                if e.is_timeout() || e.is_connect() {
                    GatewayError::Transient {
                        status: 0,
                        detail: redact(&e.to_string(), &self.api_key),
                    }
                } else {
                    GatewayError::Http {
                        detail: redact(&e.to_string(), &self.api_key),
                    }
                }
            })?;

        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => {
                return Err(GatewayError::Auth {
                    provider: self.provider.clone(),
                    status,
                })
            }
            408 | 429 | 500..=599 => {
                return Err(GatewayError::Transient {
                    status,
                    detail: format!("{} returned {status}", self.provider),
                })
            }
            _ => {
                let text = response.text().unwrap_or_default();
                return Err(GatewayError::Http {
                    detail: format!(
                        "{} returned {status}: {}",
                        self.provider,
                        redact(truncate(&text, 200), &self.api_key)
                    ),
                });
            }
        }

        let parsed: WireResponse = response.json().map_err(|e| GatewayError::MalformedResponse {
            detail: redact(&e.to_string(), &self.api_key),
        })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| GatewayError::MalformedResponse {
                detail: "response has no choices".to_string(),
            })?;
        let usage = parsed
            .usage
            .map(|u| TokenUsage {
                prompt: u.prompt_tokens,
                completion: u.completion_tokens,
            })
            .unwrap_or_default();
        Ok(TransportReply {
            text: choice.message.content,
            usage,
        })
    }

    fn description(&self) -> String {
        format!("http chat at {}", self.endpoint)
    }
}

fn truncate(text: &str, limit: usize) -> &str {
    match text.char_indices().nth(limit) {
        Some((index, _)) => &text[..index],
        None => text,
    }
}

/// Strips the credential from any text that might reach logs or errors.
fn redact(text: &str, key: &str) -> String {
    if key.is_empty() {
        text.to_string()
    } else {
        text.replace(key, "[redacted]")
    }
}
