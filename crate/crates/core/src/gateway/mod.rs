//! Chat-completion gateway with a persistent response cache, bounded retries
//! and a concurrency limiter.
//!
//! Every prompt call in the pipeline goes through [`Gateway::complete`].
//! Requests are idempotent, so transient failures (timeouts, 429, 5xx,
//! connection errors) are retried with exponential backoff; 401/403 are not.

mod cache;
mod http;
mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::digest::FieldHasher;
use crate::prompt::{RenderedPrompt, TemplateId};

pub use cache::{CacheEntry, ResponseCache};
pub use http::HttpBackend;
pub use scripted::{ScriptMode, ScriptSpec, ScriptedBackend};

pub const DEFAULT_TEMPERATURE: f64 = 0.001;
pub const DEFAULT_MAX_TOKENS: u32 = 512;
pub const DEFAULT_API_KEY_ENV: &str = "PARAALIGN_API_KEY";
pub const DEFAULT_MODEL: &str = "meta-llama/Meta-Llama-3-8B-Instruct";

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid gateway config: {0}")]
    InvalidConfig(String),
    #[error("transport failure after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: String },
    #[error("endpoint rejected credentials (HTTP {0})")]
    AuthRejected(u16),
    #[error("endpoint rejected request (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("completion yielded an empty answer")]
    EmptyAnswer,
    #[error("scripted backend has no entry for input {0:?}")]
    LookupMiss(String),
    #[error("cache io: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub base_url: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub request_timeout_ms: u64,
    pub max_retries: u32,
    pub concurrency_limit: usize,
    pub api_key_env: String,
    pub retry_base_delay_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_name: DEFAULT_MODEL.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: DEFAULT_MAX_TOKENS,
            request_timeout_ms: 120_000,
            max_retries: 3,
            concurrency_limit: 4,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            retry_base_delay_ms: 500,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidConfig(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if self.concurrency_limit == 0 {
            return Err(GatewayError::InvalidConfig("concurrency_limit must be >= 1".into()));
        }
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::InvalidConfig("model_name is empty".into()));
        }
        Ok(())
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Body of `POST <base_url>/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub messages: Vec<ChatMessage>,
}

impl WireRequest {
    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }
}

#[derive(Debug, Clone)]
pub enum BackendFailure {
    Timeout(String),
    Connect(String),
    Status { code: u16, body: String },
    LookupMiss(String),
}

impl BackendFailure {
    fn retryable(&self) -> bool {
        match self {
            BackendFailure::Timeout(_) | BackendFailure::Connect(_) => true,
            BackendFailure::Status { code, .. } => *code == 429 || (500..600).contains(code),
            BackendFailure::LookupMiss(_) => false,
        }
    }

    fn describe(&self) -> String {
        match self {
            BackendFailure::Timeout(m) => format!("timeout: {m}"),
            BackendFailure::Connect(m) => format!("connect: {m}"),
            BackendFailure::Status { code, body } => format!("HTTP {code}: {body}"),
            BackendFailure::LookupMiss(s) => format!("lookup miss: {s}"),
        }
    }
}

/// Something that answers chat-completion requests with a raw JSON payload.
pub trait Backend: Send + Sync {
    fn send(&self, request: &WireRequest, timeout: Duration) -> Result<String, BackendFailure>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestParams {
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone)]
pub struct GatewayRequest {
    pub prompt: RenderedPrompt,
    pub params: RequestParams,
    pub tag: String,
}

impl GatewayRequest {
    pub fn cache_key(&self) -> CacheKey {
        CacheKey::new(&self.params, &self.prompt.text)
    }

    fn wire(&self) -> WireRequest {
        WireRequest {
            model: self.params.model_name.clone(),
            temperature: self.params.temperature,
            max_tokens: self.params.max_tokens,
            messages: vec![ChatMessage { role: "user".into(), content: self.prompt.text.clone() }],
        }
    }
}

/// Digest of (model, temperature, max_tokens, prompt text).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn new(params: &RequestParams, prompt: &str) -> Self {
        let mut h = FieldHasher::new();
        h.field(&params.model_name)
            .field(params.temperature.to_bits().to_le_bytes())
            .field(params.max_tokens.to_le_bytes())
            .field(prompt);
        CacheKey(h.finish())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub raw: String,
    pub cached: bool,
    #[serde(with = "duration_ms")]
    pub latency: Duration,
}

mod duration_ms {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion payload.
pub fn completion_content(raw: &str) -> Result<String, GatewayError> {
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .map(str::to_string)
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))
}

fn strip_quotes(s: &str) -> &str {
    const PAIRS: [(char, char); 5] =
        [('"', '"'), ('\'', '\''), ('\u{201c}', '\u{201d}'), ('\u{300c}', '\u{300d}'), ('`', '`')];
    for (open, close) in PAIRS {
        if let Some(inner) = s.strip_prefix(open).and_then(|r| r.strip_suffix(close)) {
            if !inner.contains(open) && !inner.contains(close) {
                return inner.trim();
            }
        }
    }
    s
}

/// Extracts the answer from completion text.
///
/// For P1 the answer is whatever follows the last `###<TGT>:` cue, up to the
/// next `###` marker; with no cue present the text up to the first marker is
/// used (the model continued straight after the prompt's own cue). For P2/P3
/// the whole completion is the answer. Surrounding whitespace and a single
/// pair of wrapping quotes are removed.
pub fn extract_answer(content: &str, template: TemplateId, tgt_name: &str) -> Result<String, GatewayError> {
    let body = match template {
        TemplateId::P1 => {
            let cue = format!("###{tgt_name}:");
            let after = match content.rfind(&cue) {
                Some(pos) => &content[pos + cue.len()..],
                None => content,
            };
            match after.find("###") {
                Some(end) => &after[..end],
                None => after,
            }
        }
        TemplateId::P2 | TemplateId::P3 => content,
    };
    let answer = strip_quotes(body.trim());
    if answer.is_empty() {
        Err(GatewayError::EmptyAnswer)
    } else {
        Ok(answer.to_string())
    }
}

struct Limiter {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

struct Permit<'a>(&'a Limiter);

impl Limiter {
    fn new(limit: usize) -> Self {
        Self { in_flight: Mutex::new(0), freed: Condvar::new(), limit }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

/// Counters for cache and backend traffic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub cache_hits: u64,
    pub backend_attempts: u64,
}

pub struct Gateway {
    cfg: GatewayConfig,
    backend: Arc<dyn Backend>,
    cache: Arc<ResponseCache>,
    limiter: Limiter,
    requests: AtomicU64,
    cache_hits: AtomicU64,
    attempts: AtomicU64,
}

impl Gateway {
    pub fn new(cfg: GatewayConfig, backend: Arc<dyn Backend>) -> Result<Self, GatewayError> {
        Self::with_cache(cfg, backend, Arc::new(ResponseCache::in_memory()))
    }

    pub fn with_cache(
        cfg: GatewayConfig,
        backend: Arc<dyn Backend>,
        cache: Arc<ResponseCache>,
    ) -> Result<Self, GatewayError> {
        cfg.validate()?;
        Ok(Self {
            limiter: Limiter::new(cfg.concurrency_limit),
            cfg,
            backend,
            cache,
            requests: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            requests: self.requests.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
            backend_attempts: self.attempts.load(Ordering::SeqCst),
        }
    }

    pub fn request(&self, prompt: RenderedPrompt, tag: impl Into<String>) -> GatewayRequest {
        GatewayRequest {
            prompt,
            params: RequestParams {
                model_name: self.cfg.model_name.clone(),
                temperature: self.cfg.temperature,
                max_tokens: self.cfg.max_tokens,
            },
            tag: tag.into(),
        }
    }

    /// Whether a response for this request is already cached.
    pub fn is_cached(&self, req: &GatewayRequest) -> bool {
        self.cache.get(&req.cache_key()).is_some()
    }

    pub fn complete(&self, req: &GatewayRequest) -> Result<Completion, GatewayError> {
        self.requests.fetch_add(1, Ordering::SeqCst);
        let key = req.cache_key();
        let started = Instant::now();
        if let Some(hit) = self.cache.get(&key) {
            return Ok(self.hit(hit, started));
        }
        // Single flight per key: concurrent callers with the same key wait
        // here and then find the entry in the cache.
        let key_lock = self.cache.key_lock(&key);
        let _guard = key_lock.lock().unwrap();
        if let Some(hit) = self.cache.get(&key) {
            return Ok(self.hit(hit, started));
        }

        let wire = req.wire();
        let raw = {
            let _permit = self.limiter.acquire();
            self.send_with_retries(&wire)?
        };
        let content = completion_content(&raw)?;
        let content = content.strip_prefix(req.prompt.text.as_str()).unwrap_or(&content);
        let text = extract_answer(content, req.prompt.template_id, &req.prompt.tgt_name)?;
        self.cache.put(
            &key,
            CacheEntry {
                request: wire,
                raw: raw.clone(),
                text: text.clone(),
                timestamp: chrono::Utc::now().to_rfc3339(),
            },
        )?;
        Ok(Completion { text, raw, cached: false, latency: started.elapsed() })
    }

    fn hit(&self, entry: CacheEntry, started: Instant) -> Completion {
        self.cache_hits.fetch_add(1, Ordering::SeqCst);
        Completion { text: entry.text, raw: entry.raw, cached: true, latency: started.elapsed() }
    }

    fn send_with_retries(&self, wire: &WireRequest) -> Result<String, GatewayError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::SeqCst);
            match self.backend.send(wire, self.cfg.request_timeout()) {
                Ok(raw) => return Ok(raw),
                Err(BackendFailure::LookupMiss(s)) => return Err(GatewayError::LookupMiss(s)),
                Err(BackendFailure::Status { code: code @ (401 | 403), .. }) => {
                    return Err(GatewayError::AuthRejected(code))
                }
                Err(f) if f.retryable() && attempt <= self.cfg.max_retries => {
                    let delay = self.cfg.retry_base_delay_ms.saturating_mul(1 << (attempt - 1).min(16));
                    log::debug!("attempt {attempt} failed ({}), retrying in {delay} ms", f.describe());
                    std::thread::sleep(Duration::from_millis(delay));
                }
                Err(BackendFailure::Status { code, body }) if !(code == 429 || code >= 500) => {
                    return Err(GatewayError::Rejected { status: code, body })
                }
                Err(f) => return Err(GatewayError::Transport { attempts: attempt, last: f.describe() }),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{render, ShotPair};

    fn fast_cfg() -> GatewayConfig {
        GatewayConfig { retry_base_delay_ms: 1, model_name: "test-8b".into(), ..Default::default() }
    }

    fn p2(input: &str) -> RenderedPrompt {
        render(TemplateId::P2, "Chinese", "English", &[], input).unwrap()
    }

    #[test]
    fn config_validation() {
        let bad = GatewayConfig { temperature: -0.1, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = GatewayConfig { concurrency_limit: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert_eq!(GatewayConfig::default().temperature, 0.001);
        assert_eq!(GatewayConfig::default().max_tokens, 512);
    }

    #[test]
    fn second_request_is_cached() {
        let backend = Arc::new(ScriptedBackend::new(ScriptMode::Echo));
        let gw = Gateway::new(fast_cfg(), backend.clone()).unwrap();
        let req = gw.request(p2("abc"), "t");
        let first = gw.complete(&req).unwrap();
        let second = gw.complete(&req).unwrap();
        assert!(!first.cached);
        assert!(second.cached);
        assert_eq!(second.text, "abc");
        assert_eq!(second.raw, first.raw);
        assert_eq!(backend.total_calls(), 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let backend = Arc::new(ScriptedBackend::new(ScriptMode::FailNThen { text: "ok".into(), n: 2 }));
        let gw = Gateway::new(fast_cfg(), backend.clone()).unwrap();
        let c = gw.complete(&gw.request(p2("x"), "t")).unwrap();
        assert_eq!(c.text, "ok");
        assert_eq!(backend.total_calls(), 3);
    }

    #[test]
    fn retries_exhausted() {
        let backend = Arc::new(ScriptedBackend::new(ScriptMode::FailNThen { text: "ok".into(), n: 5 }));
        let cfg = GatewayConfig { max_retries: 2, ..fast_cfg() };
        let gw = Gateway::new(cfg, backend.clone()).unwrap();
        let err = gw.complete(&gw.request(p2("x"), "t")).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 3, .. }));
        assert_eq!(backend.total_calls(), 3);
    }

    #[test]
    fn auth_failures_not_retried() {
        let backend = Arc::new(ScriptedBackend::new(ScriptMode::Status { code: 401 }));
        let gw = Gateway::new(fast_cfg(), backend.clone()).unwrap();
        let err = gw.complete(&gw.request(p2("x"), "t")).unwrap_err();
        assert!(matches!(err, GatewayError::AuthRejected(401)));
        assert_eq!(backend.total_calls(), 1);
    }

    #[test]
    fn lookup_fixture_answer() {
        let table = [("他是一般人".to_string(), "He is not famous enough.".to_string())].into();
        let backend = Arc::new(ScriptedBackend::new(ScriptMode::Lookup { table }));
        let gw = Gateway::new(fast_cfg(), backend).unwrap();
        let c = gw.complete(&gw.request(p2("他是一般人"), "t")).unwrap();
        assert_eq!(c.text, "He is not famous enough.");
        let err = gw.complete(&gw.request(p2("未知"), "t")).unwrap_err();
        assert!(matches!(err, GatewayError::LookupMiss(_)));
    }

    #[test]
    fn cache_key_depends_on_all_params() {
        let base = RequestParams { model_name: "m".into(), temperature: 0.001, max_tokens: 512 };
        let k = CacheKey::new(&base, "p");
        assert_eq!(k, CacheKey::new(&base.clone(), "p"));
        assert_ne!(k, CacheKey::new(&RequestParams { temperature: 0.0, ..base.clone() }, "p"));
        assert_ne!(k, CacheKey::new(&RequestParams { max_tokens: 10, ..base.clone() }, "p"));
        assert_ne!(k, CacheKey::new(&RequestParams { model_name: "n".into(), ..base.clone() }, "p"));
        assert_ne!(k, CacheKey::new(&base, "q"));
    }

    #[test]
    fn p1_extraction() {
        let raw = "###English: So that it doesn't happen again.\n###Chinese: 以免";
        assert_eq!(extract_answer(raw, TemplateId::P1, "English").unwrap(), "So that it doesn't happen again.");
        assert_eq!(extract_answer(" plain answer\n###Chinese: x", TemplateId::P1, "English").unwrap(), "plain answer");
        assert!(matches!(extract_answer("  ", TemplateId::P1, "English"), Err(GatewayError::EmptyAnswer)));
    }

    #[test]
    fn p2_extraction_trims_and_unquotes() {
        assert_eq!(extract_answer("  hello  ", TemplateId::P2, "English").unwrap(), "hello");
        assert_eq!(extract_answer("\"hello\"", TemplateId::P3, "English").unwrap(), "hello");
        assert_eq!(extract_answer("“你好”", TemplateId::P3, "Chinese").unwrap(), "你好");
        assert_eq!(extract_answer("\"a\" and \"b\"", TemplateId::P2, "x").unwrap(), "\"a\" and \"b\"");
    }

    #[test]
    fn echoed_prompt_is_stripped() {
        struct EchoPrompt;
        impl Backend for EchoPrompt {
            fn send(&self, r: &WireRequest, _: Duration) -> Result<String, BackendFailure> {
                Ok(scripted::payload(&r.model, &format!("{} 他是不夠有名的人。\n###English: x", r.prompt())))
            }
        }
        let gw = Gateway::new(fast_cfg(), Arc::new(EchoPrompt)).unwrap();
        let shots = [ShotPair::new("Hi.", "你好。")];
        let prompt = render(TemplateId::P1, "English", "Chinese", &shots, "He is not famous enough.").unwrap();
        let c = gw.complete(&gw.request(prompt, "t")).unwrap();
        assert_eq!(c.text, "他是不夠有名的人。");
    }

    #[test]
    fn malformed_payload() {
        assert!(matches!(completion_content("{\"choices\":[]}"), Err(GatewayError::MalformedResponse(_))));
        assert!(matches!(completion_content("not json"), Err(GatewayError::MalformedResponse(_))));
    }
}
