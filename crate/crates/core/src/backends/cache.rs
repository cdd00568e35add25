//! Persistent response cache.
//!
//! One file per key under the cache directory; the filename is the hex
//! SHA-256 of the canonicalized request, the content a JSON envelope of
//! request, response, and write timestamp. Writes go through a temp file and
//! rename, so concurrent readers never observe torn entries and rewrites of
//! the same key are last-writer-wins.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use super::{GenerationRequest, GenerationResponse, ModelBackend};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CacheEnvelope {
    request: GenerationRequest,
    response: GenerationResponse,
    timestamp: String,
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Cache key over (backend id, model, canonicalized prompt, temperature,
    /// top_k, sample_index, want_logprobs). Prompt text is NFC-normalized;
    /// whitespace is prompt-significant and kept as is.
    pub fn key(backend_id: &str, req: &GenerationRequest) -> String {
        let mut hasher = Sha256::new();
        hasher.update(backend_id.as_bytes());
        hasher.update([0]);
        hasher.update(req.model.as_bytes());
        hasher.update([0]);
        for message in &req.messages {
            hasher.update(match message.role {
                super::Role::System => b"system".as_slice(),
                super::Role::User => b"user".as_slice(),
                super::Role::Assistant => b"assistant".as_slice(),
            });
            hasher.update([1]);
            let normalized: String = message.content.nfc().collect();
            hasher.update(normalized.as_bytes());
            hasher.update([2]);
        }
        hasher.update(req.temperature.to_bits().to_le_bytes());
        match req.top_k {
            Some(k) => {
                hasher.update([1]);
                hasher.update(k.to_le_bytes());
            }
            None => hasher.update([0; 5]),
        }
        hasher.update(req.sample_index.to_le_bytes());
        hasher.update([u8::from(req.want_logprobs)]);
        hex_encode(&hasher.finalize())
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(key)
    }

    pub fn get(&self, key: &str) -> Result<Option<GenerationResponse>> {
        let path = self.path_for(key);
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        let envelope: CacheEnvelope = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("corrupt cache entry {path:?}: {e}")))?;
        Ok(Some(envelope.response))
    }

    pub fn put(&self, key: &str, req: &GenerationRequest, resp: &GenerationResponse) -> Result<()> {
        let envelope = CacheEnvelope {
            request: req.clone(),
            response: resp.clone(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        };
        let body = serde_json::to_vec(&envelope)?;
        let final_path = self.path_for(key);
        // pid + sequence keeps concurrent writers of one key off each
        // other's temp files; the rename is what readers observe
        static WRITE_SEQ: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
        let tmp = self.dir.join(format!(
            ".{key}.{}.{}.tmp",
            std::process::id(),
            WRITE_SEQ.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
        ));
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &final_path)?;
        Ok(())
    }
}

fn hex_encode(bytes: &[u8]) -> String {
    use std::fmt::Write;
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

/// Wraps any backend with the persistent cache. Hits come back with
/// `cached = true` and identical text; misses call through and persist.
pub struct CachedBackend {
    inner: Arc<dyn ModelBackend>,
    cache: ResponseCache,
}

impl CachedBackend {
    pub fn new(inner: Arc<dyn ModelBackend>, cache: ResponseCache) -> Self {
        CachedBackend { inner, cache }
    }
}

#[async_trait]
impl ModelBackend for CachedBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn supports_logprobs(&self) -> bool {
        self.inner.supports_logprobs()
    }

    async fn generate(&self, req: &GenerationRequest) -> Result<GenerationResponse> {
        let key = ResponseCache::key(self.inner.id(), req);
        if let Some(mut hit) = self.cache.get(&key)? {
            hit.cached = true;
            return Ok(hit);
        }
        let resp = self.inner.generate(req).await?;
        self.cache.put(&key, req, &resp)?;
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::mock::{MockBackend, MockFixture};
    use crate::backends::ChatMessage;

    fn req(prompt: &str, index: u32) -> GenerationRequest {
        GenerationRequest::new("m", vec![ChatMessage::user(prompt)])
            .with_temperature(0.6)
            .with_sample_index(index)
    }

    #[test]
    fn sample_index_never_collides() {
        let a = ResponseCache::key("b", &req("p", 0));
        let b = ResponseCache::key("b", &req("p", 1));
        assert_ne!(a, b);
    }

    #[test]
    fn key_covers_every_disambiguating_field() {
        let base = req("p", 0);
        let variants = [
            ResponseCache::key("other-backend", &base),
            ResponseCache::key("b", &{
                let mut r = base.clone();
                r.model = "m2".into();
                r
            }),
            ResponseCache::key("b", &base.clone().with_temperature(0.0)),
            ResponseCache::key("b", &base.clone().with_top_k(Some(10))),
            ResponseCache::key("b", &base.clone().with_logprobs(true)),
            ResponseCache::key("b", &req("p2", 0)),
        ];
        let orig = ResponseCache::key("b", &base);
        for v in variants {
            assert_ne!(v, orig);
        }
    }

    #[test]
    fn prompt_is_nfc_normalized_for_the_key() {
        // e-acute composed vs decomposed
        let composed = req("caf\u{e9}", 0);
        let decomposed = req("cafe\u{301}", 0);
        assert_eq!(
            ResponseCache::key("b", &composed),
            ResponseCache::key("b", &decomposed)
        );
        // whitespace stays significant
        assert_ne!(
            ResponseCache::key("b", &req("a b", 0)),
            ResponseCache::key("b", &req("a  b", 0))
        );
    }

    #[tokio::test]
    async fn second_identical_request_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(dir.path()).unwrap();
        let backend = CachedBackend::new(
            Arc::new(MockBackend::new("mock", MockFixture::default())),
            cache,
        );
        let request = req("tell me things", 2);
        let first = backend.generate(&request).await.unwrap();
        assert!(!first.cached);
        let second = backend.generate(&request).await.unwrap();
        assert!(second.cached);
        assert_eq!(first.text, second.text);
    }
}
