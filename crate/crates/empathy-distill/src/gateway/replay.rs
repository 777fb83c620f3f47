//! Deterministic replay providers: scripted maps and warm cache directories.

use std::collections::BTreeMap;
use std::sync::Mutex;

use super::{CompletionRequest, GatewayError, ResponseCache, TokenUsage, Transport, TransportReply};

/// A map from request content address to completion text.
#[derive(Debug, Clone, Default)]
pub struct ReplayScript {
    responses: BTreeMap<String, String>,
}

impl ReplayScript {
    /// Scripts the reply for one concrete request.
    pub fn insert(&mut self, request: &CompletionRequest, text: impl Into<String>) {
        self.responses.insert(request.cache_key(), text.into());
    }

    /// Scripts a reply by raw content address.
    pub fn insert_key(&mut self, key: impl Into<String>, text: impl Into<String>) {
        self.responses.insert(key.into(), text.into());
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn into_transport(self) -> ScriptTransport {
        ScriptTransport {
            responses: self.responses,
            sent: Mutex::new(Vec::new()),
        }
    }
}

/// In-memory replay transport; records every request it serves so tests can
/// inspect the traffic.
pub struct ScriptTransport {
    responses: BTreeMap<String, String>,
    sent: Mutex<Vec<CompletionRequest>>,
}

impl ScriptTransport {
    /// Requests served so far, in order.
    pub fn sent(&self) -> Vec<CompletionRequest> {
        self.sent.lock().expect("script log lock").clone()
    }

    pub fn send_count(&self) -> usize {
        self.sent.lock().expect("script log lock").len()
    }
}

impl Transport for ScriptTransport {
    fn send(&self, request: &CompletionRequest) -> Result<TransportReply, GatewayError> {
        self.sent.lock().expect("script log lock").push(request.clone());
        match self.responses.get(&request.cache_key()) {
            Some(text) => Ok(TransportReply {
                text: text.clone(),
                usage: TokenUsage::default(),
            }),
            None => Err(GatewayError::ReplayMiss {
                model: request.model.clone(),
                key: request.cache_key(),
            }),
        }
    }

    fn is_replay(&self) -> bool {
        true
    }

    fn description(&self) -> String {
        format!("scripted replay ({} entries)", self.responses.len())
    }
}

/// Replay transport backed by a warm cache directory; a lookup miss is an
/// error rather than a network call.
pub struct ReplayTransport {
    cache: ResponseCache,
}

impl ReplayTransport {
    pub fn new(cache: ResponseCache) -> ReplayTransport {
        ReplayTransport { cache }
    }
}

impl Transport for ReplayTransport {
    fn send(&self, request: &CompletionRequest) -> Result<TransportReply, GatewayError> {
        match self.cache.lookup(request)? {
            Some(entry) => Ok(TransportReply {
                text: entry.text,
                usage: entry.usage,
            }),
            None => Err(GatewayError::ReplayMiss {
                model: request.model.clone(),
                key: request.cache_key(),
            }),
        }
    }

    fn is_replay(&self) -> bool {
        true
    }

    fn description(&self) -> String {
        format!("cache replay at {}", self.cache.root().display())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{ChatMessage, Gateway};

    #[test]
    fn cache_directory_replay_serves_stored_entries() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let request = CompletionRequest {
            model: "m".to_string(),
            messages: vec![ChatMessage::user("q")],
            temperature: 0.0,
            max_tokens: 8,
            seed: None,
        };
        cache
            .store(
                &request,
                &TransportReply {
                    text: "stored".to_string(),
                    usage: TokenUsage::default(),
                },
            )
            .unwrap();

        let gateway = Gateway::with_transport(std::sync::Arc::new(ReplayTransport::new(
            ResponseCache::new(dir.path()),
        )));
        let result = gateway.complete(&request).unwrap();
        assert_eq!(result.text, "stored");
        assert!(result.cached);
    }
}
