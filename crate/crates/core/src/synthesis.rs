//! Paraphrase-pair synthesis by few-shot back-translation.
//!
//! For each bitext pair `(X, Y)` the target sentence `Y` is translated back
//! into the source language with P1 (SRC bound to the target language, TGT
//! to the source language). The answer `X'` mirrors the structure of `Y`
//! while staying in the source language, giving the aligned pair `(X, X')`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, ParallelPair};
use crate::gateway::{Gateway, GatewayError};
use crate::lang::LangCode;
use crate::metrics::tokenize;
use crate::pool::parallel_map;
use crate::prompt::{render, ShotPair, TemplateId};

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("back-translation needs at least one few-shot example")]
    EmptyShotList,
    #[error("bitext is empty")]
    EmptyBitext,
    #[error("no paraphrase pairs generated out of {} requested; check the endpoint", .0.requested)]
    AllPairsFailed(SynthesisReport),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad paraphrase record at line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParaphrasePair {
    pub pair_id: u64,
    pub lang: LangCode,
    pub original: String,
    pub paraphrase: String,
    pub model: String,
    pub prompt_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPolicy {
    pub min_len_ratio: f64,
    pub max_len_ratio: f64,
    pub drop_identical: bool,
    pub require_langid: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self { min_len_ratio: 0.5, max_len_ratio: 2.0, drop_identical: false, require_langid: false }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if self.min_len_ratio > 0.0 && self.min_len_ratio <= 1.0 && self.max_len_ratio >= 1.0 {
            Ok(())
        } else {
            Err(format!(
                "need 0 < min_len_ratio <= 1 <= max_len_ratio, got {} / {}",
                self.min_len_ratio, self.max_len_ratio
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Empty,
    Identical,
    Ratio,
    Langid,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Empty => "empty",
            DropReason::Identical => "identical",
            DropReason::Ratio => "ratio",
            DropReason::Langid => "langid",
        }
    }
}

/// Pluggable language identification. `None` means the detector cannot
/// judge this language; the check then passes.
pub trait LanguageDetector: Send + Sync {
    fn matches(&self, text: &str, lang: &LangCode) -> Option<bool>;
}

/// Unicode-script heuristic: the majority of letters must be in the script
/// the language is written in.
#[derive(Debug, Default, Clone, Copy)]
pub struct ScriptDetector;

impl LanguageDetector for ScriptDetector {
    fn matches(&self, text: &str, lang: &LangCode) -> Option<bool> {
        let in_script: fn(char) -> bool = match lang {
            LangCode::Zh => {
                |c| matches!(c, '\u{4e00}'..='\u{9fff}' | '\u{3400}'..='\u{4dbf}' | '\u{f900}'..='\u{faff}')
            }
            LangCode::Heb => |c| matches!(c, '\u{0590}'..='\u{05ff}'),
            LangCode::En | LangCode::De | LangCode::Swh => {
                |c| c.is_ascii_alphabetic() || matches!(c, '\u{00c0}'..='\u{024f}')
            }
            LangCode::Other(_) => return None,
        };
        let letters: Vec<char> = text.chars().filter(|c| c.is_alphabetic()).collect();
        if letters.is_empty() {
            return Some(false);
        }
        let hits = letters.iter().filter(|&&c| in_script(c)).count();
        Some(hits * 2 > letters.len())
    }
}

/// Decides whether a synthesized pair is kept. Length ratio is
/// `tokens(paraphrase) / tokens(original)` with inclusive bounds.
pub fn apply_policy(
    pair: &ParaphrasePair,
    policy: &FilterPolicy,
    detector: Option<&dyn LanguageDetector>,
) -> Result<(), DropReason> {
    if pair.paraphrase.trim().is_empty() {
        return Err(DropReason::Empty);
    }
    if policy.drop_identical && pair.paraphrase == pair.original {
        return Err(DropReason::Identical);
    }
    let orig_len = tokenize(&pair.original, &pair.lang).len();
    let para_len = tokenize(&pair.paraphrase, &pair.lang).len();
    if orig_len > 0 {
        let ratio = para_len as f64 / orig_len as f64;
        if ratio < policy.min_len_ratio || ratio > policy.max_len_ratio {
            return Err(DropReason::Ratio);
        }
    }
    if policy.require_langid {
        match detector.and_then(|d| d.matches(&pair.paraphrase, &pair.lang)) {
            Some(false) => return Err(DropReason::Langid),
            Some(true) => {}
            None => log::warn!("no language detector for {}; langid check passes", pair.lang),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub requested: usize,
    pub generated: usize,
    pub filtered_out: BTreeMap<DropReason, usize>,
    pub gateway_failures: usize,
    pub cache_hits: usize,
    pub failures: BTreeMap<u64, String>,
}

impl SynthesisReport {
    pub fn filtered_total(&self) -> usize {
        self.filtered_out.values().sum()
    }
}

enum Outcome {
    Kept(ParaphrasePair, bool),
    Dropped(DropReason, bool),
    Failed(String),
}

/// Back-translation synthesizer.
pub struct Synthesizer<'a> {
    gateway: &'a Gateway,
    shots: &'a [ShotPair],
    policy: FilterPolicy,
    detector: Option<Box<dyn LanguageDetector>>,
}

impl<'a> Synthesizer<'a> {
    /// `shots` run in the back-translation direction: target-language
    /// sentence first, source-language sentence second.
    pub fn new(gateway: &'a Gateway, shots: &'a [ShotPair], policy: FilterPolicy) -> Self {
        Self { gateway, shots, policy, detector: Some(Box::new(ScriptDetector)) }
    }

    pub fn with_detector(mut self, detector: Option<Box<dyn LanguageDetector>>) -> Self {
        self.detector = detector;
        self
    }

    pub fn run(&self, bitext: &ParallelCorpus) -> Result<(Vec<ParaphrasePair>, SynthesisReport), SynthesisError> {
        if self.shots.is_empty() {
            return Err(SynthesisError::EmptyShotList);
        }
        if bitext.is_empty() {
            return Err(SynthesisError::EmptyBitext);
        }
        let outcomes =
            parallel_map(bitext.pairs(), self.gateway.config().concurrency_limit, |p| (p.id, self.one(p, bitext)));

        let mut report = SynthesisReport { requested: bitext.len(), ..Default::default() };
        let mut pairs = Vec::new();
        for (id, outcome) in outcomes {
            match outcome {
                Outcome::Kept(pair, cached) => {
                    report.generated += 1;
                    report.cache_hits += cached as usize;
                    pairs.push(pair);
                }
                Outcome::Dropped(reason, cached) => {
                    *report.filtered_out.entry(reason).or_default() += 1;
                    report.cache_hits += cached as usize;
                }
                Outcome::Failed(e) => {
                    log::warn!("pair {id}: back-translation failed: {e}");
                    report.gateway_failures += 1;
                    report.failures.insert(id, e);
                }
            }
        }
        if report.generated == 0 {
            return Err(SynthesisError::AllPairsFailed(report));
        }
        Ok((pairs, report))
    }

    fn one(&self, pair: &ParallelPair, bitext: &ParallelCorpus) -> Outcome {
        let direction = bitext.direction();
        let prompt = match render(
            TemplateId::P1,
            direction.tgt().display_name(),
            direction.src().display_name(),
            self.shots,
            &pair.tgt_text,
        ) {
            Ok(p) => p,
            Err(e) => return Outcome::Failed(e.to_string()),
        };
        let prompt_digest = prompt.text_digest();
        let req = self.gateway.request(prompt, format!("synthesize/{direction}/{}", pair.id));
        let (paraphrase, cached) = match self.gateway.complete(&req) {
            Ok(c) => (c.text, c.cached),
            Err(GatewayError::EmptyAnswer) => (String::new(), false),
            Err(e) => return Outcome::Failed(e.to_string()),
        };
        let candidate = ParaphrasePair {
            pair_id: pair.id,
            lang: direction.src().clone(),
            original: pair.src_text.clone(),
            paraphrase,
            model: self.gateway.config().model_name.clone(),
            prompt_digest,
        };
        match apply_policy(&candidate, &self.policy, self.detector.as_deref()) {
            Ok(()) => Outcome::Kept(candidate, cached),
            Err(reason) => Outcome::Dropped(reason, cached),
        }
    }
}

pub fn synthesize(
    bitext: &ParallelCorpus,
    gateway: &Gateway,
    shots: &[ShotPair],
    policy: FilterPolicy,
) -> Result<(Vec<ParaphrasePair>, SynthesisReport), SynthesisError> {
    Synthesizer::new(gateway, shots, policy).run(bitext)
}

pub fn write_pairs(pairs: &[ParaphrasePair], path: &Path) -> Result<(), SynthesisError> {
    let io = |source| SynthesisError::Io { path: path.display().to_string(), source };
    let mut out = Vec::new();
    for p in pairs {
        serde_json::to_writer(&mut out, p).expect("pair serializes");
        out.push(b'\n');
    }
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(&out).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<ParaphrasePair>, SynthesisError> {
    let text =
        fs::read_to_string(path).map_err(|source| SynthesisError::Io { path: path.display().to_string(), source })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SynthesisError::BadRecord { line: i + 1, reason: e.to_string() })
        })
        .collect()
}
