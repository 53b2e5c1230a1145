//! Translation quality metrics: native ROUGE-L, the COMET service client,
//! and score-delta arithmetic.

pub mod comet;
pub mod rouge;
pub mod tokenize;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lang::LangCode;
use crate::translate::TranslationResult;

pub use comet::{comet_batch, CometItem, CometScorer, HttpScorer, MockScorer, ScoreResponse};
pub use rouge::{lcs_length, rouge_l, RougeLScore};
pub use tokenize::{tokenize, TokenScheme, TokenSeq};

/// Scoring conventions recorded alongside every report.
pub const ROUGE_CONVENTION: &str =
    "rouge-l f1 (beta=1); nfc; lowercase; zh per-character with ascii runs whole; punctuation dropped";

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no reference for pair {0}")]
    MissingReference(u64),
    #[error("cannot compare {0} with {1}")]
    MetricMismatch(Metric, Metric),
    #[error("scores cover different test sets ({0} vs {1} sentences)")]
    SizeMismatch(usize, usize),
    #[error("scores cover different test sets (checksum {0} vs {1})")]
    TestSetMismatch(String, String),
    #[error("scorer unreachable: {0}")]
    ScorerUnreachable(String),
    #[error("scorer contract violation: {0}")]
    ContractViolation(String),
    #[error("COMET batch must be non-empty")]
    EmptyBatch,
    #[error("COMET item {0} has an empty field")]
    IncompleteItem(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Comet,
    RougeL,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Comet => "COMET",
            Metric::RougeL => "ROUGE-L",
        })
    }
}

/// Corpus-level score on the ×100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusScore {
    pub metric: Metric,
    #[serde(default)]
    pub system: String,
    pub value: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_sentence: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_checksum: Option<String>,
}

impl CorpusScore {
    /// A published or externally computed value with no per-sentence detail.
    pub fn stored(metric: Metric, system: impl Into<String>, value: f64, n: usize) -> Self {
        Self { metric, system: system.into(), value, n, per_sentence: None, test_checksum: None }
    }

    pub fn with_system(mut self, system: impl Into<String>) -> Self {
        self.system = system.into();
        self
    }
}

/// `a − b`, rounded to two decimals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDelta {
    pub metric: Metric,
    pub system_a: String,
    pub system_b: String,
    pub delta: f64,
}

impl ScoreDelta {
    /// Signed two-decimal rendering, e.g. "+2.71" or "-6.04".
    pub fn signed(&self) -> String {
        format_signed(self.delta)
    }
}

pub fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn format_signed(x: f64) -> String {
    let x = round2(x);
    if x > 0.0 {
        format!("+{x:.2}")
    } else {
        format!("{x:.2}")
    }
}

/// Corpus ROUGE-L: 100 × mean sentence F1. Failed translations (empty
/// hypothesis) score zero. Summation runs in pair-id order so the value does
/// not depend on input order.
pub fn corpus_rouge(
    results: &[TranslationResult],
    refs: &BTreeMap<u64, String>,
    lang: &LangCode,
) -> Result<CorpusScore, MetricsError> {
    let mut by_id: Vec<&TranslationResult> = results.iter().collect();
    by_id.sort_by_key(|r| r.pair_id);
    let mut per_sentence = Vec::with_capacity(by_id.len());
    for r in by_id {
        let reference = refs.get(&r.pair_id).ok_or(MetricsError::MissingReference(r.pair_id))?;
        let hyp = tokenize(&r.hypothesis, lang);
        let rf = tokenize(reference, lang);
        per_sentence.push(rouge_l(&hyp, &rf).f1);
    }
    let n = per_sentence.len();
    let value = if n == 0 { 0.0 } else { 100.0 * per_sentence.iter().sum::<f64>() / n as f64 };
    Ok(CorpusScore {
        metric: Metric::RougeL,
        system: String::new(),
        value,
        n,
        per_sentence: Some(per_sentence),
        test_checksum: None,
    })
}

/// Difference of two corpus scores over the same test set.
pub fn delta(a: &CorpusScore, b: &CorpusScore) -> Result<ScoreDelta, MetricsError> {
    if a.metric != b.metric {
        return Err(MetricsError::MetricMismatch(a.metric, b.metric));
    }
    if a.n != b.n {
        return Err(MetricsError::SizeMismatch(a.n, b.n));
    }
    if let (Some(ca), Some(cb)) = (&a.test_checksum, &b.test_checksum) {
        if ca != cb {
            return Err(MetricsError::TestSetMismatch(ca.clone(), cb.clone()));
        }
    }
    Ok(ScoreDelta {
        metric: a.metric,
        system_a: a.system.clone(),
        system_b: b.system.clone(),
        delta: round2(a.value - b.value),
    })
}
