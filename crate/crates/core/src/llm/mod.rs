//! Provider-agnostic text generation and embedding.
//!
//! [`Gateway`] wraps a [`Provider`] with per-attempt timeouts, bounded
//! retries with exponential backoff, an in-flight cap and a request journal.
//! The [`stub::StubProvider`] is a pure function of its inputs, so the whole
//! pipeline runs offline and deterministically.

pub mod http;
pub mod stub;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::config::{ProviderConfig, ProviderKind};

pub use http::HttpProvider;
pub use stub::StubProvider;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub rendered_prompt: String,
    pub max_output_chars: usize,
    pub temperature: f64,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenerationResult {
    pub text: String,
    pub provider: String,
    pub latency_ms: u64,
    pub truncated: bool,
}

/// Failure of a single provider call.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited,
    #[error("provider returned status {0}")]
    Status(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("api key environment variable {0} is not set")]
    MissingKey(String),
}

impl ProviderError {
    fn is_transient(&self) -> bool {
        match self {
            ProviderError::Timeout | ProviderError::RateLimited | ProviderError::Transport(_) => true,
            ProviderError::Status(s) => *s >= 500,
            ProviderError::Malformed(_) | ProviderError::MissingKey(_) => false,
        }
    }
}

/// Gateway error; every variant carries the request id.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("request {request_id} timed out")]
    Timeout { request_id: String },
    #[error("request {request_id} was rate limited")]
    RateLimited { request_id: String },
    #[error("request {request_id} failed: {message}")]
    Provider {
        request_id: String,
        status: Option<u16>,
        message: String,
    },
    #[error("request {request_id}: provider returned vectors of differing dimension ({expected} vs {found})")]
    DimensionMismatch {
        request_id: String,
        expected: usize,
        found: usize,
    },
    #[error("request {request_id}: batch of {size} outside 1..={limit}")]
    BadBatch {
        request_id: String,
        size: usize,
        limit: usize,
    },
}

impl LlmError {
    pub fn request_id(&self) -> &str {
        match self {
            LlmError::Timeout { request_id }
            | LlmError::RateLimited { request_id }
            | LlmError::Provider { request_id, .. }
            | LlmError::DimensionMismatch { request_id, .. }
            | LlmError::BadBatch { request_id, .. } => request_id,
        }
    }

    fn from_provider(request_id: String, e: ProviderError) -> Self {
        match e {
            ProviderError::Timeout => LlmError::Timeout { request_id },
            ProviderError::RateLimited => LlmError::RateLimited { request_id },
            ProviderError::Status(s) => LlmError::Provider {
                request_id,
                status: Some(s),
                message: e.to_string(),
            },
            other => LlmError::Provider {
                request_id,
                status: None,
                message: other.to_string(),
            },
        }
    }
}

pub trait Provider: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, prompt: &str, temperature: f64, timeout: Duration) -> Result<String, ProviderError>;
    fn embed(&self, texts: &[String], timeout: Duration) -> Result<Vec<Vec<f64>>, ProviderError>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttemptRecord {
    pub request_id: String,
    pub operation: &'static str,
    pub attempt: u32,
    pub outcome: String,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct GatewayLimits {
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub max_batch: usize,
    pub backoff_base: Duration,
}

impl GatewayLimits {
    pub fn from_config(config: &ProviderConfig) -> Self {
        GatewayLimits {
            timeout: Duration::from_millis(config.timeout_ms),
            max_retries: config.max_retries,
            max_in_flight: config.max_in_flight,
            max_batch: config.max_batch,
            backoff_base: Duration::from_millis(100),
        }
    }
}

struct Permits {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a Permits);

impl Permits {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.available.lock().expect("permit lock");
        while *n == 0 {
            n = self.freed.wait(n).expect("permit lock");
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().expect("permit lock") += 1;
        self.0.freed.notify_one();
    }
}

static NEXT_REQUEST: AtomicU64 = AtomicU64::new(1);

pub struct Gateway {
    provider: Arc<dyn Provider>,
    limits: GatewayLimits,
    permits: Permits,
    journal: Mutex<Vec<AttemptRecord>>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, limits: GatewayLimits) -> Self {
        Gateway {
            provider,
            permits: Permits {
                available: Mutex::new(limits.max_in_flight.max(1)),
                freed: Condvar::new(),
            },
            limits,
            journal: Mutex::new(Vec::new()),
        }
    }

    pub fn from_config(config: &ProviderConfig) -> Self {
        let provider: Arc<dyn Provider> = match config.kind {
            ProviderKind::Stub => Arc::new(StubProvider),
            ProviderKind::Http => Arc::new(HttpProvider::from_config(config)),
        };
        Gateway::new(provider, GatewayLimits::from_config(config))
    }

    pub fn stub() -> Self {
        Gateway::from_config(&ProviderConfig::default())
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    pub fn new_request_id() -> String {
        format!("req-{}", NEXT_REQUEST.fetch_add(1, Ordering::Relaxed))
    }

    pub fn request(&self, prompt: String, temperature: f64, max_output_chars: usize) -> GenerationRequest {
        GenerationRequest {
            rendered_prompt: prompt,
            max_output_chars,
            temperature,
            request_id: Gateway::new_request_id(),
        }
    }

    /// Attempts recorded so far, oldest first.
    pub fn journal(&self) -> Vec<AttemptRecord> {
        self.journal.lock().expect("journal lock").clone()
    }

    fn record(&self, request_id: &str, operation: &'static str, attempt: u32, outcome: String, started: Instant) {
        self.journal.lock().expect("journal lock").push(AttemptRecord {
            request_id: request_id.to_string(),
            operation,
            attempt,
            outcome,
            elapsed_ms: started.elapsed().as_millis() as u64,
        });
    }

    /// Runs `call` with retries. The whole exchange, backoff included, stays
    /// within `(max_retries + 1) * timeout`.
    fn with_retries<T>(
        &self,
        request_id: &str,
        operation: &'static str,
        mut call: impl FnMut(Duration) -> Result<T, ProviderError>,
    ) -> Result<T, LlmError> {
        let _permit = self.permits.acquire();
        let started = Instant::now();
        let budget = self.limits.timeout * (self.limits.max_retries + 1);
        let mut attempt = 0;
        loop {
            let remaining = budget.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                return Err(LlmError::Timeout {
                    request_id: request_id.to_string(),
                });
            }
            let attempt_started = Instant::now();
            let result = call(self.limits.timeout.min(remaining));
            match result {
                Ok(v) => {
                    self.record(request_id, operation, attempt, "ok".into(), attempt_started);
                    return Ok(v);
                }
                Err(e) => {
                    self.record(request_id, operation, attempt, e.to_string(), attempt_started);
                    if !e.is_transient() || attempt >= self.limits.max_retries {
                        return Err(LlmError::from_provider(request_id.to_string(), e));
                    }
                    let backoff = self.limits.backoff_base * 2u32.saturating_pow(attempt);
                    let remaining = budget.saturating_sub(started.elapsed());
                    // leave half of what is left for the next attempt
                    std::thread::sleep(backoff.min(remaining / 2));
                    attempt += 1;
                }
            }
        }
    }

    pub fn generate(&self, req: &GenerationRequest) -> Result<GenerationResult, LlmError> {
        let started = Instant::now();
        let text = self.with_retries(&req.request_id, "generate", |timeout| {
            self.provider.generate(&req.rendered_prompt, req.temperature, timeout)
        })?;
        let truncated = text.chars().count() > req.max_output_chars;
        let text = if truncated {
            text.chars().take(req.max_output_chars).collect()
        } else {
            text
        };
        Ok(GenerationResult {
            text,
            provider: self.provider.name().to_string(),
            latency_ms: started.elapsed().as_millis() as u64,
            truncated,
        })
    }

    /// One unit vector per input text, all of the same dimension.
    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let request_id = Gateway::new_request_id();
        if texts.is_empty() || texts.len() > self.limits.max_batch {
            return Err(LlmError::BadBatch {
                request_id,
                size: texts.len(),
                limit: self.limits.max_batch,
            });
        }
        let vectors = self.with_retries(&request_id, "embed", |timeout| self.provider.embed(texts, timeout))?;
        if vectors.len() != texts.len() {
            return Err(LlmError::Provider {
                request_id,
                status: None,
                message: format!("expected {} vectors, got {}", texts.len(), vectors.len()),
            });
        }
        let dim = vectors[0].len();
        let mut out = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.len() != dim {
                return Err(LlmError::DimensionMismatch {
                    request_id,
                    expected: dim,
                    found: v.len(),
                });
            }
            match normalize(v) {
                Some(v) => out.push(v),
                None => {
                    return Err(LlmError::Provider {
                        request_id,
                        status: None,
                        message: "provider returned a zero or non-finite vector".into(),
                    })
                }
            }
        }
        Ok(out)
    }

    /// Embeds any number of texts, splitting into provider-sized batches.
    pub fn embed_all(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.limits.max_batch.max(1)) {
            out.extend(self.embed_batch(batch)?);
        }
        Ok(out)
    }
}

/// Scales `v` to unit L2 norm; `None` for zero or non-finite input.
pub fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    for x in &mut v {
        *x /= norm;
    }
    Some(v)
}
