//! Content-addressed response cache.
//!
//! Layout: `<root>/<model>/<request-key>.json` plus a human-readable
//! `<request-key>.prompt.txt` sidecar holding the prompt that produced the
//! entry, so distilled data stays auditable. Writes go to a temp file first
//! and are renamed into place.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CompletionRequest, GatewayError, TokenUsage, TransportReply};

/// One cached completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_key: String,
    pub model: String,
    pub text: String,
    pub usage: TokenUsage,
}

/// File-backed cache keyed by [`CompletionRequest::cache_key`].
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> ResponseCache {
        ResponseCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry_path(&self, request: &CompletionRequest) -> PathBuf {
        self.root
            .join(sanitize_component(&request.model))
            .join(format!("{}.json", request.cache_key()))
    }

    pub fn lookup(&self, request: &CompletionRequest) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.entry_path(request);
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => return Err(GatewayError::CacheIo { path, source }),
        };
        let entry: CacheEntry = serde_json::from_str(&raw).map_err(|e| GatewayError::MalformedResponse {
            detail: format!("corrupt cache entry {}: {e}", path.display()),
        })?;
        Ok(Some(entry))
    }

    pub fn store(&self, request: &CompletionRequest, reply: &TransportReply) -> Result<(), GatewayError> {
        let path = self.entry_path(request);
        let dir = path.parent().expect("entry path has a parent");
        std::fs::create_dir_all(dir).map_err(|source| GatewayError::CacheIo {
            path: dir.to_path_buf(),
            source,
        })?;
        let entry = CacheEntry {
            request_key: request.cache_key(),
            model: request.model.clone(),
            text: reply.text.clone(),
            usage: reply.usage,
        };
        let body = serde_json::to_vec_pretty(&entry).expect("cache entry serializes");
        atomic_write(&path, &body)?;

        let sidecar = path.with_extension("prompt.txt");
        let mut prompt = String::new();
        for message in &request.messages {
            let role = match message.role {
                super::Role::System => "system",
                super::Role::User => "user",
                super::Role::Assistant => "assistant",
            };
            prompt.push_str(&format!("[{role}]\n{}\n\n", message.content));
        }
        atomic_write(&sidecar, prompt.as_bytes())
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), GatewayError> {
    let dir = path.parent().expect("path has a parent");
    let tmp = dir.join(format!(
        ".tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("entry")
    ));
    std::fs::write(&tmp, bytes).map_err(|source| GatewayError::CacheIo {
        path: tmp.clone(),
        source,
    })?;
    std::fs::rename(&tmp, path).map_err(|source| GatewayError::CacheIo {
        path: path.to_path_buf(),
        source,
    })
}

/// Keeps cache paths filesystem-safe for arbitrary model names.
fn sanitize_component(name: &str) -> String {
    let sanitized: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if sanitized.is_empty() {
        "_".to_string()
    } else {
        sanitized
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    fn request(model: &str, text: &str) -> CompletionRequest {
        CompletionRequest {
            model: model.to_string(),
            messages: vec![ChatMessage::user(text)],
            temperature: 0.7,
            max_tokens: 32,
            seed: None,
        }
    }

    #[test]
    fn store_then_lookup_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let req = request("gpt-4o", "hello");
        let reply = TransportReply {
            text: "hi".to_string(),
            usage: TokenUsage {
                prompt: 3,
                completion: 1,
            },
        };
        cache.store(&req, &reply).unwrap();
        let entry = cache.lookup(&req).unwrap().unwrap();
        assert_eq!(entry.text, "hi");
        assert_eq!(entry.usage.prompt, 3);

        // Sidecar exists and holds the prompt.
        let sidecar = dir
            .path()
            .join("gpt-4o")
            .join(format!("{}.prompt.txt", req.cache_key()));
        let prompt = std::fs::read_to_string(sidecar).unwrap();
        assert!(prompt.contains("hello"));
    }

    #[test]
    fn lookup_miss_is_none() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        assert!(cache.lookup(&request("m", "nothing")).unwrap().is_none());
    }

    #[test]
    fn model_names_are_sanitized_in_paths() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path());
        let req = request("org/model:v1", "x");
        let reply = TransportReply {
            text: "y".to_string(),
            usage: TokenUsage::default(),
        };
        cache.store(&req, &reply).unwrap();
        assert!(dir.path().join("org_model_v1").is_dir());
        assert_eq!(cache.lookup(&req).unwrap().unwrap().text, "y");
    }
}
