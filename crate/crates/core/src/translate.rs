//! Test-set translation in three modes.
//!
//! * `fewshot`: one P1 call per sentence (the prompting baseline).
//! * `fused`: one P2 call, for an endpoint fine-tuned on the mixed dataset.
//! * `staged`: a P3 rewrite of the source sentence, then P2 on the rewrite.
//!
//! Runs are tracked in a [`RunLedger`] so an interrupted run can be resumed
//! without repeating completed sentences.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, ParallelPair};
use crate::digest::FieldHasher;
use crate::gateway::{Gateway, GatewayError};
use crate::lang::Direction;
use crate::pool::parallel_map;
use crate::prompt::{render, PromptError, ShotPair, TemplateId};

#[derive(Debug, thiserror::Error)]
pub enum TranslateError {
    #[error("few-shot mode needs at least one example")]
    ShotsRequired,
    #[error("{0} mode takes no few-shot examples")]
    ShotsForbidden(Mode),
    #[error("ledger mismatch: {0}")]
    LedgerMismatch(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad run file {path}: {reason}")]
    BadRunFile { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fewshot,
    Fused,
    Staged,
}

impl Mode {
    /// Gateway calls issued per sentence before cache hits.
    pub fn calls_per_sentence(self) -> usize {
        match self {
            Mode::Fewshot | Mode::Fused => 1,
            Mode::Staged => 2,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Fewshot => "fewshot",
            Mode::Fused => "fused",
            Mode::Staged => "staged",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fewshot" | "few-shot" => Ok(Mode::Fewshot),
            "fused" => Ok(Mode::Fused),
            "staged" => Ok(Mode::Staged),
            other => Err(format!("unknown mode {other:?} (fewshot|fused|staged)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslationResult {
    pub pair_id: u64,
    pub mode: Mode,
    pub src: String,
    #[serde(rename = "ref")]
    pub reference: String,
    pub hypothesis: String,
    #[serde(rename = "intermediate", default, skip_serializing_if = "Option::is_none")]
    pub intermediate_paraphrase: Option<String>,
    #[serde(default)]
    pub prompt_digests: Vec<String>,
    #[serde(default)]
    pub cached_calls: usize,
    /// Staged mode only: the rewrite failed and the original sentence was
    /// translated instead.
    #[serde(default)]
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl TranslationResult {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLedger {
    pub run_id: String,
    pub direction: Direction,
    pub mode: Mode,
    pub model: String,
    pub test_checksum: String,
    pub completed: BTreeSet<u64>,
    pub failures: BTreeMap<u64, String>,
}

impl RunLedger {
    pub fn new(test: &ParallelCorpus, mode: Mode, model: &str) -> Self {
        let mut h = FieldHasher::new();
        h.field(test.direction().to_string()).field(mode.to_string()).field(model).field(test.checksum());
        let digest = h.finish();
        Self {
            run_id: format!("{}-{}-{}", test.direction(), mode, &digest[..12]),
            direction: test.direction().clone(),
            mode,
            model: model.to_string(),
            test_checksum: test.checksum().to_string(),
            completed: BTreeSet::new(),
            failures: BTreeMap::new(),
        }
    }

    fn check_matches(&self, test: &ParallelCorpus, mode: Mode, model: &str) -> Result<(), TranslateError> {
        let mismatch = |what: &str, have: &dyn fmt::Display, want: &dyn fmt::Display| {
            Err(TranslateError::LedgerMismatch(format!("{what}: ledger has {have}, request has {want}")))
        };
        if &self.direction != test.direction() {
            return mismatch("direction", &self.direction, test.direction());
        }
        if self.mode != mode {
            return mismatch("mode", &self.mode, &mode);
        }
        if self.model != model {
            return mismatch("model", &self.model, &model);
        }
        if self.test_checksum != test.checksum() {
            return mismatch("test set", &self.test_checksum, &test.checksum());
        }
        Ok(())
    }

    pub fn is_complete(&self, test: &ParallelCorpus) -> bool {
        test.pairs().iter().all(|p| self.completed.contains(&p.id))
    }
}

/// Results plus the ledger that describes them.
#[derive(Debug, Clone, PartialEq)]
pub struct TranslateRun {
    pub results: Vec<TranslationResult>,
    pub ledger: RunLedger,
}

impl TranslateRun {
    pub fn run_dir(root: &Path, run_id: &str) -> PathBuf {
        root.join("runs").join(run_id)
    }

    /// Writes `runs/<run_id>/ledger.json` and `results.jsonl` under `root`.
    pub fn save(&self, root: &Path) -> Result<PathBuf, TranslateError> {
        let dir = Self::run_dir(root, &self.ledger.run_id);
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| TranslateError::Io { path: path.clone(), source }
        };
        fs::create_dir_all(&dir).map_err(io(&dir))?;
        let mut results = Vec::new();
        for r in &self.results {
            serde_json::to_writer(&mut results, r).expect("result serializes");
            results.push(b'\n');
        }
        let ledger = serde_json::to_vec_pretty(&self.ledger).expect("ledger serializes");
        for (name, bytes) in [("results.jsonl", results), ("ledger.json", ledger)] {
            let path = dir.join(name);
            let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io(&path))?;
            tmp.write_all(&bytes).map_err(io(&path))?;
            tmp.persist(&path).map_err(|e| TranslateError::Io { path: path.clone(), source: e.error })?;
        }
        Ok(dir)
    }

    pub fn load(run_dir: &Path) -> Result<Self, TranslateError> {
        let read = |name: &str| {
            let path = run_dir.join(name);
            fs::read_to_string(&path).map_err(|source| TranslateError::Io { path, source })
        };
        let bad = |name: &str, e: serde_json::Error| TranslateError::BadRunFile {
            path: run_dir.join(name),
            reason: e.to_string(),
        };
        let ledger: RunLedger = serde_json::from_str(&read("ledger.json")?).map_err(|e| bad("ledger.json", e))?;
        let mut results = Vec::new();
        for line in read("results.jsonl")?.lines().filter(|l| !l.trim().is_empty()) {
            results.push(serde_json::from_str(line).map_err(|e| bad("results.jsonl", e))?);
        }
        Ok(Self { results, ledger })
    }
}

/// Drives one test set through the gateway in one mode.
pub struct Driver<'a> {
    gateway: &'a Gateway,
    mode: Mode,
    shots: &'a [ShotPair],
    limit: Option<usize>,
}

impl<'a> Driver<'a> {
    pub fn new(gateway: &'a Gateway, mode: Mode, shots: &'a [ShotPair]) -> Result<Self, TranslateError> {
        match mode {
            Mode::Fewshot if shots.is_empty() => Err(TranslateError::ShotsRequired),
            Mode::Fused | Mode::Staged if !shots.is_empty() => Err(TranslateError::ShotsForbidden(mode)),
            _ => Ok(Self { gateway, mode, shots, limit: None }),
        }
    }

    /// Stops after attempting at most `n` new sentences, leaving the rest for
    /// a later resume.
    pub fn limit(mut self, n: usize) -> Self {
        self.limit = Some(n);
        self
    }

    pub fn run(&self, test: &ParallelCorpus) -> Result<TranslateRun, TranslateError> {
        let ledger = RunLedger::new(test, self.mode, &self.gateway.config().model_name);
        self.resume(TranslateRun { results: Vec::new(), ledger }, test)
    }

    /// Attempts every pair not yet in `prior.ledger.completed` and merges the
    /// outcome with the prior results.
    pub fn resume(&self, prior: TranslateRun, test: &ParallelCorpus) -> Result<TranslateRun, TranslateError> {
        let TranslateRun { results: prior_results, mut ledger } = prior;
        ledger.check_matches(test, self.mode, &self.gateway.config().model_name)?;

        let mut pending: Vec<&ParallelPair> =
            test.pairs().iter().filter(|p| !ledger.completed.contains(&p.id)).collect();
        if let Some(n) = self.limit {
            pending.truncate(n);
        }

        let fresh = self.translate_all(&pending, test.direction());
        let mut merged: BTreeMap<u64, TranslationResult> = prior_results.into_iter().map(|r| (r.pair_id, r)).collect();
        for r in fresh {
            match &r.failure {
                Some(reason) => {
                    ledger.failures.insert(r.pair_id, reason.clone());
                }
                None => {
                    ledger.failures.remove(&r.pair_id);
                    ledger.completed.insert(r.pair_id);
                }
            }
            merged.insert(r.pair_id, r);
        }
        Ok(TranslateRun { results: merged.into_values().collect(), ledger })
    }

    fn translate_all(&self, pending: &[&ParallelPair], direction: &Direction) -> Vec<TranslationResult> {
        parallel_map(pending, self.gateway.config().concurrency_limit, |pair| self.translate_one(pair, direction))
    }

    #[allow(clippy::too_many_arguments)]
    fn call(
        &self,
        id: TemplateId,
        src_name: &str,
        tgt_name: &str,
        shots: &[ShotPair],
        input: &str,
        tag: &str,
        digests: &mut Vec<String>,
        cached: &mut usize,
    ) -> Result<String, String> {
        let prompt = render(id, src_name, tgt_name, shots, input).map_err(|e: PromptError| e.to_string())?;
        digests.push(prompt.text_digest());
        let completion =
            self.gateway.complete(&self.gateway.request(prompt, tag)).map_err(|e: GatewayError| e.to_string())?;
        if completion.cached {
            *cached += 1;
        }
        Ok(completion.text)
    }

    fn translate_one(&self, pair: &ParallelPair, direction: &Direction) -> TranslationResult {
        let src_name = direction.src().display_name();
        let tgt_name = direction.tgt().display_name();
        let tag = format!("translate/{}/{}/{}", direction, self.mode, pair.id);
        let mut digests = Vec::new();
        let mut cached = 0;
        let mut intermediate = None;
        let mut fallback = false;

        let outcome = match self.mode {
            Mode::Fewshot => self.call(
                TemplateId::P1,
                src_name,
                tgt_name,
                self.shots,
                &pair.src_text,
                &tag,
                &mut digests,
                &mut cached,
            ),
            Mode::Fused => {
                self.call(TemplateId::P2, src_name, tgt_name, &[], &pair.src_text, &tag, &mut digests, &mut cached)
            }
            Mode::Staged => {
                let rewrite =
                    self.call(TemplateId::P3, src_name, tgt_name, &[], &pair.src_text, &tag, &mut digests, &mut cached);
                let input = match rewrite {
                    Ok(p) => {
                        intermediate = Some(p.clone());
                        p
                    }
                    Err(e) => {
                        log::warn!("pair {}: rewrite failed ({e}); translating the original", pair.id);
                        fallback = true;
                        pair.src_text.clone()
                    }
                };
                self.call(TemplateId::P2, src_name, tgt_name, &[], &input, &tag, &mut digests, &mut cached)
            }
        };

        let (hypothesis, failure) = match outcome {
            Ok(h) => (h, None),
            Err(e) => {
                log::warn!("pair {} failed: {e}", pair.id);
                (String::new(), Some(e))
            }
        };
        TranslationResult {
            pair_id: pair.id,
            mode: self.mode,
            src: pair.src_text.clone(),
            reference: pair.tgt_text.clone(),
            hypothesis,
            intermediate_paraphrase: if self.mode == Mode::Staged {
                Some(intermediate.unwrap_or_else(|| pair.src_text.clone()))
            } else {
                None
            },
            prompt_digests: digests,
            cached_calls: cached,
            fallback,
            failure,
        }
    }
}

/// Translates a whole test set from scratch.
pub fn translate_corpus(
    test: &ParallelCorpus,
    mode: Mode,
    gateway: &Gateway,
    shots: &[ShotPair],
) -> Result<TranslateRun, TranslateError> {
    Driver::new(gateway, mode, shots)?.run(test)
}

/// Continues a previous run, attempting only pairs it did not complete.
pub fn resume(
    prior: TranslateRun,
    test: &ParallelCorpus,
    mode: Mode,
    gateway: &Gateway,
    shots: &[ShotPair],
) -> Result<TranslateRun, TranslateError> {
    Driver::new(gateway, mode, shots)?.resume(prior, test)
}
