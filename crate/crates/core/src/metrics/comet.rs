//! Client side of the COMET scoring service.
//!
//! Wire contract: `POST <url>/score` with `{"items":[{"src","mt","ref"}]}`
//! answers `{"scores":[..], "system_score": f, "model": "..."}`;
//! `GET <url>/health` answers `{"status":"ok","model":".."}` once the model
//! is loaded and 503 before.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::rouge::lcs_length;
use super::{CorpusScore, Metric, MetricsError};

pub const DEFAULT_COMET_MODEL: &str = "wmt22-comet-da";
/// Largest batch sent in one request; bigger inputs are split client-side.
pub const DEFAULT_BATCH_CAP: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CometItem {
    pub src: String,
    pub mt: String,
    #[serde(rename = "ref")]
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
    pub system_score: f64,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model: String,
}

pub trait CometScorer: Send + Sync {
    /// Scores one batch; implementations need not split.
    fn score(&self, items: &[CometItem]) -> Result<ScoreResponse, MetricsError>;
}

/// HTTP client for a running scorer service.
pub struct HttpScorer {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpScorer {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { base_url: base_url.into().trim_end_matches('/').to_string(), agent }
    }

    pub fn health(&self) -> Result<Health, MetricsError> {
        let url = format!("{}/health", self.base_url);
        let resp = self.agent.get(&url).call().map_err(|e| MetricsError::ScorerUnreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(MetricsError::ScorerUnreachable(format!("health returned {status}")));
        }
        let body = resp.into_body().read_to_string().map_err(|e| MetricsError::ScorerUnreachable(e.to_string()))?;
        serde_json::from_str(&body).map_err(|e| MetricsError::ContractViolation(e.to_string()))
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    items: &'a [CometItem],
}

impl CometScorer for HttpScorer {
    fn score(&self, items: &[CometItem]) -> Result<ScoreResponse, MetricsError> {
        let url = format!("{}/score", self.base_url);
        let resp = self
            .agent
            .post(&url)
            .send_json(ScoreRequest { items })
            .map_err(|e| MetricsError::ScorerUnreachable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.into_body().read_to_string().map_err(|e| MetricsError::ScorerUnreachable(e.to_string()))?;
        match status {
            200 => serde_json::from_str(&body)
                .map_err(|e| MetricsError::ContractViolation(format!("bad score response: {e}"))),
            503 => Err(MetricsError::ScorerUnreachable("scorer model not loaded (503)".into())),
            s => Err(MetricsError::ContractViolation(format!("scorer returned {s}: {body}"))),
        }
    }
}

/// Offline stand-in for the neural scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MockScorer {
    /// Every item gets the same score.
    Constant { score: f64 },
    /// Character-level LCS F1 between `mt` and `ref`.
    Overlap,
}

impl MockScorer {
    fn item_score(&self, item: &CometItem) -> f64 {
        match self {
            MockScorer::Constant { score } => *score,
            MockScorer::Overlap => {
                let mt: Vec<char> = item.mt.chars().collect();
                let rf: Vec<char> = item.reference.chars().collect();
                if mt.is_empty() || rf.is_empty() {
                    return 0.0;
                }
                2.0 * lcs_length(&mt, &rf) as f64 / (mt.len() + rf.len()) as f64
            }
        }
    }
}

impl CometScorer for MockScorer {
    fn score(&self, items: &[CometItem]) -> Result<ScoreResponse, MetricsError> {
        let scores: Vec<f64> = items.iter().map(|i| self.item_score(i)).collect();
        let system_score = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
        Ok(ScoreResponse { scores, system_score, model: "mock".into() })
    }
}

/// Scores a batch through `scorer`, splitting into chunks of at most
/// `batch_cap` items. The corpus value is 100 × the system score; with
/// several chunks the chunk system scores are combined by size-weighted mean.
pub fn comet_batch(
    items: &[CometItem],
    scorer: &dyn CometScorer,
    batch_cap: usize,
) -> Result<CorpusScore, MetricsError> {
    if items.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    if let Some(i) = items.iter().position(|it| it.src.is_empty() || it.mt.is_empty() || it.reference.is_empty()) {
        return Err(MetricsError::IncompleteItem(i));
    }
    let mut per_sentence = Vec::with_capacity(items.len());
    let mut weighted = 0.0;
    for chunk in items.chunks(batch_cap.max(1)) {
        let resp = scorer.score(chunk)?;
        if resp.scores.len() != chunk.len() {
            return Err(MetricsError::ContractViolation(format!(
                "{} scores for {} items",
                resp.scores.len(),
                chunk.len()
            )));
        }
        if let Some(bad) = resp.scores.iter().chain([&resp.system_score]).find(|s| !s.is_finite()) {
            return Err(MetricsError::ContractViolation(format!("non-finite score {bad}")));
        }
        weighted += resp.system_score * chunk.len() as f64;
        per_sentence.extend(resp.scores);
    }
    Ok(CorpusScore {
        metric: Metric::Comet,
        system: String::new(),
        value: 100.0 * weighted / items.len() as f64,
        n: items.len(),
        per_sentence: Some(per_sentence),
        test_checksum: None,
    })
}
