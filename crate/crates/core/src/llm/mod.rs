//! Completion backends and the client that wraps them with caching, an
//! in-flight cap and rate limiting.

mod cache;
mod http;
mod limits;
mod mock;

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use cache::{cache_key, CacheEntry, Lookup, ResponseCache};
pub use http::{Backoff, HttpBackend, HttpReply, ReqwestTransport, Transport, TransportError};
pub use limits::{InFlightGate, RateLimiter};
pub use mock::{MockBackend, MockScript};

use crate::error::BackendError;
use crate::model::{BackendKind, RunConfig};
use crate::prompt::PromptTemplates;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
}

/// A single-shot text completion service.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;
    fn kind(&self) -> BackendKind;
}

/// Counters kept by [`LlmClient`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientStats {
    /// Calls that reached the backend.
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub corrupt_cache_entries: u64,
    pub peak_in_flight: usize,
}

pub struct LlmClient {
    backend: Arc<dyn CompletionBackend>,
    cache: Option<ResponseCache>,
    gate: InFlightGate,
    limiter: Option<RateLimiter>,
    model_name: String,
    temperature: f64,
    max_tokens: Option<u32>,
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
    corrupt: AtomicU64,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn CompletionBackend>, config: &RunConfig) -> Self {
        Self {
            backend,
            cache: None,
            gate: InFlightGate::new(config.max_in_flight),
            limiter: config.requests_per_minute.map(RateLimiter::per_minute),
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            backend_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            corrupt: AtomicU64::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            model_name: self.model_name.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    /// Calls the backend directly, subject to the in-flight cap and rate limit.
    pub fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::Config("empty prompt".to_string()));
        }
        let _permit = self.gate.acquire();
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        self.backend_calls.fetch_add(1, Ordering::SeqCst);
        self.backend.complete(request)
    }

    /// Serves from the cache when possible; otherwise calls the backend and
    /// stores the answer. Returns the text and whether it was a cache hit.
    pub fn cached_complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<(String, bool), BackendError> {
        let Some(cache) = &self.cache else {
            return self.complete(request).map(|text| (text, false));
        };
        let key = cache_key(request);
        match cache.lookup(&key) {
            Lookup::Hit(entry) => {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                return Ok((entry.response_text, true));
            }
            Lookup::Quarantined(_) => {
                self.corrupt.fetch_add(1, Ordering::SeqCst);
            }
            Lookup::Miss => {}
        }
        let text = self.complete(request)?;
        cache
            .store(request, self.backend.kind(), &text)
            .map_err(|e| BackendError::Cache(e.to_string()))?;
        Ok((text, false))
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            backend_calls: self.backend_calls.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            corrupt_cache_entries: self.corrupt.load(Ordering::SeqCst),
            peak_in_flight: self.gate.peak(),
        }
    }

    pub fn max_in_flight(&self) -> usize {
        self.gate.limit()
    }
}

/// Builds the backend named by `config.backend`.
///
/// The HTTP backend reads its API key from the environment variable named by
/// `config.api_key_env`. Without one, requests go out unauthenticated, which
/// suits local compatible servers.
pub fn build_backend(
    config: &RunConfig,
    templates: &PromptTemplates,
    mock_script: Option<MockScript>,
) -> Result<Arc<dyn CompletionBackend>, BackendError> {
    match config.backend {
        BackendKind::Mock => {
            let script = mock_script.ok_or_else(|| {
                BackendError::Config("mock backend needs a mock script".to_string())
            })?;
            Ok(Arc::new(MockBackend::new(script, templates.clone())?))
        }
        BackendKind::Http => {
            let api_key = std::env::var(&config.api_key_env)
                .ok()
                .filter(|k| !k.is_empty());
            if api_key.is_none() {
                log::warn!(
                    "{} is not set; sending requests without credentials",
                    config.api_key_env
                );
            }
            let transport = ReqwestTransport::new(Duration::from_secs(120))?;
            Ok(Arc::new(HttpBackend::new(
                transport,
                &config.base_url,
                api_key,
                config.max_retries,
            )))
        }
    }
}

/// Opens the response cache at `dir`.
pub fn open_cache(dir: &Path) -> Result<ResponseCache, BackendError> {
    ResponseCache::open(dir).map_err(|e| BackendError::Cache(format!("{}: {e}", dir.display())))
}
