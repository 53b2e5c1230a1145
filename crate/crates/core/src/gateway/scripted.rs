//! Deterministic offline backend for tests and dry runs.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendFailure, WireRequest};
use crate::prompt::{input_sentence, TemplateId};

/// How a scripted backend answers. Responses are keyed on the input sentence
/// recovered from the rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ScriptMode {
    /// Returns the input sentence unchanged.
    Echo,
    /// Returns the input's whitespace-separated words in reverse order.
    ReverseWords,
    /// Looks the input up in a table; unknown inputs are an error.
    Lookup { table: BTreeMap<String, String> },
    /// Fails the first `n` calls with HTTP 503, then answers `text`.
    FailNThen { text: String, n: usize },
    /// Always answers with the given HTTP status.
    Status { code: u16 },
    /// Every call fails as if the connection were refused.
    Refuse,
}

/// A default mode plus per-template overrides, so the P3 and P2 halves of a
/// staged run can be scripted independently.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptSpec {
    #[serde(flatten)]
    pub default: ScriptMode,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_template: BTreeMap<TemplateId, ScriptMode>,
}

pub struct ScriptedBackend {
    spec: ScriptSpec,
    latency: Duration,
    total: AtomicUsize,
    failed_so_far: AtomicUsize,
    per_key: Mutex<HashMap<String, usize>>,
    prompts: Mutex<Vec<String>>,
}

pub(crate) fn payload(model: &str, content: &str) -> String {
    serde_json::json!({
        "id": "scripted",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": { "role": "assistant", "content": content },
            "finish_reason": "stop"
        }]
    })
    .to_string()
}

impl ScriptedBackend {
    pub fn new(mode: ScriptMode) -> Self {
        Self::from_spec(ScriptSpec { default: mode, per_template: BTreeMap::new() })
    }

    pub fn from_spec(spec: ScriptSpec) -> Self {
        Self {
            spec,
            latency: Duration::ZERO,
            total: AtomicUsize::new(0),
            failed_so_far: AtomicUsize::new(0),
            per_key: Mutex::new(HashMap::new()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn with_template(mut self, id: TemplateId, mode: ScriptMode) -> Self {
        self.spec.per_template.insert(id, mode);
        self
    }

    /// Simulated per-call latency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn total_calls(&self) -> usize {
        self.total.load(Ordering::SeqCst)
    }

    /// Calls received for one input sentence.
    pub fn calls_for(&self, input: &str) -> usize {
        self.per_key.lock().unwrap().get(input).copied().unwrap_or(0)
    }

    /// Every prompt received, in arrival order.
    pub fn received_prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    fn mode_for(&self, prompt: &str) -> &ScriptMode {
        TemplateId::detect(prompt).and_then(|id| self.spec.per_template.get(&id)).unwrap_or(&self.spec.default)
    }
}

impl Backend for ScriptedBackend {
    fn send(&self, request: &WireRequest, _timeout: Duration) -> Result<String, BackendFailure> {
        let prompt = request.prompt();
        let input = input_sentence(prompt).unwrap_or(prompt).to_string();
        self.total.fetch_add(1, Ordering::SeqCst);
        *self.per_key.lock().unwrap().entry(input.clone()).or_default() += 1;
        self.prompts.lock().unwrap().push(prompt.to_string());
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }

        let content = match self.mode_for(prompt) {
            ScriptMode::Echo => input,
            ScriptMode::ReverseWords => input.split_whitespace().rev().collect::<Vec<_>>().join(" "),
            ScriptMode::Lookup { table } => {
                table.get(&input).cloned().ok_or_else(|| BackendFailure::LookupMiss(input.clone()))?
            }
            ScriptMode::FailNThen { text, n } => {
                if self.failed_so_far.fetch_add(1, Ordering::SeqCst) < *n {
                    return Err(BackendFailure::Status { code: 503, body: "scripted failure".into() });
                }
                text.clone()
            }
            ScriptMode::Status { code } => {
                return Err(BackendFailure::Status { code: *code, body: "scripted status".into() })
            }
            ScriptMode::Refuse => return Err(BackendFailure::Connect("connection refused (scripted)".into())),
        };
        Ok(payload(&request.model, &content))
    }
}
