//! Chat-completions style HTTP backend with retry and backoff.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use rand::Rng;
use serde_json::{json, Value};

use super::{CompletionBackend, CompletionRequest};
use crate::error::BackendError;
use crate::model::BackendKind;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
    pub retry_after: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportError {
    Timeout(String),
    Connect(String),
    Other(String),
}

/// Sends one JSON POST. Split out so tests can inject faults.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
    ) -> Result<HttpReply, TransportError>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &str,
    ) -> Result<HttpReply, TransportError> {
        let mut req = self
            .client
            .post(url)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                TransportError::Timeout(e.to_string())
            } else if e.is_connect() {
                TransportError::Connect(e.to_string())
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        let body = resp
            .text()
            .map_err(|e| TransportError::Timeout(e.to_string()))?;
        Ok(HttpReply {
            status,
            body,
            retry_after,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub max: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_millis(500),
            max: Duration::from_secs(30),
        }
    }
}

impl Backoff {
    /// Delay before retry number `retry` (0-based): exponential, capped, with
    /// jitter drawn from the upper half of the interval.
    pub fn delay(&self, retry: u32, server_hint: Option<Duration>) -> Duration {
        let exp = self
            .base
            .saturating_mul(2u32.saturating_pow(retry))
            .min(self.max);
        let jittered = exp.mul_f64(rand::rng().random_range(0.5..=1.0));
        server_hint.map_or(jittered, |hint| hint.min(self.max).max(jittered))
    }
}

pub struct HttpBackend<T: Transport = ReqwestTransport> {
    transport: T,
    endpoint: String,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Backoff,
    attempts: AtomicU64,
}

enum Attempt {
    Done(String),
    Retry(String, Option<Duration>),
    Fail(BackendError),
}

impl<T: Transport> HttpBackend<T> {
    pub fn new(transport: T, base_url: &str, api_key: Option<String>, max_retries: u32) -> Self {
        Self {
            transport,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            max_retries,
            backoff: Backoff::default(),
            attempts: AtomicU64::new(0),
        }
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Physical HTTP attempts made so far, retries included.
    pub fn attempts(&self) -> u64 {
        self.attempts.load(Ordering::SeqCst)
    }

    fn request_body(request: &CompletionRequest) -> String {
        let mut body = json!({
            "model": request.model_name,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        });
        if let Some(max_tokens) = request.max_tokens {
            body["max_tokens"] = json!(max_tokens);
        }
        body.to_string()
    }

    fn attempt(&self, body: &str) -> Attempt {
        self.attempts.fetch_add(1, Ordering::SeqCst);
        let reply = match self
            .transport
            .post_json(&self.endpoint, self.api_key.as_deref(), body)
        {
            Ok(r) => r,
            Err(TransportError::Timeout(e) | TransportError::Connect(e)) => {
                return Attempt::Retry(e, None)
            }
            Err(TransportError::Other(e)) => {
                return Attempt::Fail(BackendError::BackendUnavailable {
                    attempts: 1,
                    last_error: e,
                })
            }
        };
        match reply.status {
            200..=299 => match extract_content(&reply.body) {
                Some(text) => Attempt::Done(text),
                None => Attempt::Fail(BackendError::BadResponse(truncate(&reply.body))),
            },
            401 | 403 => Attempt::Fail(BackendError::AuthError(truncate(&reply.body))),
            429 | 408 | 500..=599 => {
                Attempt::Retry(format!("status {}", reply.status), reply.retry_after)
            }
            400 | 413 if mentions_context_length(&reply.body) => {
                Attempt::Fail(BackendError::ContextTooLong(truncate(&reply.body)))
            }
            status => Attempt::Fail(BackendError::Rejected {
                status,
                body: truncate(&reply.body),
            }),
        }
    }
}

impl<T: Transport> CompletionBackend for HttpBackend<T> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let body = Self::request_body(request);
        let mut retry = 0;
        loop {
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(reason, hint) => {
                    if retry >= self.max_retries {
                        return Err(BackendError::BackendUnavailable {
                            attempts: retry + 1,
                            last_error: reason,
                        });
                    }
                    let wait = self.backoff.delay(retry, hint);
                    log::debug!("transient backend failure ({reason}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                    retry += 1;
                }
            }
        }
    }

    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }
}

fn extract_content(body: &str) -> Option<String> {
    let value: Value = serde_json::from_str(body).ok()?;
    value
        .pointer("/choices/0/message/content")?
        .as_str()
        .map(str::to_string)
}

fn mentions_context_length(body: &str) -> bool {
    let lower = body.to_ascii_lowercase();
    lower.contains("context_length")
        || lower.contains("context length")
        || lower.contains("maximum context")
}

fn truncate(body: &str) -> String {
    body.chars().take(300).collect()
}
