//! Config-driven experiment matrix: every (direction, system) cell is
//! translated (or read from stored scores), scored with ROUGE-L and COMET,
//! and compared against a baseline system.

mod config;
mod report;
mod sweep;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, load_parallel, CorpusError, ParallelCorpus};
use crate::gateway::{Backend, Gateway, HttpBackend, ResponseCache, ScriptSpec, ScriptedBackend};
use crate::lang::Direction;
use crate::metrics::{self, comet_batch, corpus_rouge, CometItem, CometScorer, CorpusScore, HttpScorer, Metric};
use crate::prompt::TEMPLATE_VERSION;
use crate::translate::{Driver, Mode, TranslateRun, TranslationResult};

pub use config::{
    BackendSpec, DirectionSpec, ExperimentConfig, ScorerSpec, StoredScore, SystemSource, SystemSpec, SCORER_URL_ENV,
};
pub use report::{render_report, to_cases_markdown, to_csv, to_json, to_markdown, ReportFormat};
pub use sweep::{run_sweep, SweepInputs, SweepRow, SweepScore, SweepTable, DEFAULT_SWEEP_SIZES};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("experiment has no systems")]
    NoSystems,
    #[error("duplicate system label {0:?}")]
    DuplicateLabel(String),
    #[error("baseline {0:?} is not a configured system")]
    UnknownBaseline(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("report is empty")]
    EmptyReport,
}

/// Traffic and outcome counts for one live cell.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellStats {
    pub sentences: usize,
    pub gateway_requests: u64,
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub failed_pairs: usize,
    pub fallbacks: usize,
    pub intermediates: usize,
    pub run_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub direction: Direction,
    pub system: String,
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub comet: Option<CorpusScore>,
    #[serde(default)]
    pub rouge_l: Option<CorpusScore>,
    #[serde(default)]
    pub failures: Vec<String>,
    #[serde(default)]
    pub stats: Option<CellStats>,
}

impl ReportRow {
    pub fn score(&self, metric: Metric) -> Option<&CorpusScore> {
        match metric {
            Metric::Comet => self.comet.as_ref(),
            Metric::RougeL => self.rouge_l.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalDelta {
    pub direction: Direction,
    #[serde(flatten)]
    pub delta: metrics::ScoreDelta,
}

/// One sentence compared across the baseline and another system.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub direction: Direction,
    pub pair_id: u64,
    pub src: String,
    pub tgt: String,
    pub baseline_system: String,
    pub baseline_hypothesis: String,
    pub system: String,
    pub hypothesis: String,
    #[serde(default)]
    pub intermediate: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub conventions: BTreeMap<String, String>,
    pub template_version: u32,
    pub test_checksums: BTreeMap<Direction, String>,
    pub models: BTreeMap<String, String>,
    pub temperatures: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub directions: Vec<Direction>,
    pub systems: Vec<String>,
    pub baseline: String,
    pub rows: Vec<ReportRow>,
    pub deltas: Vec<DirectionalDelta>,
    #[serde(default)]
    pub cases: Vec<CaseStudy>,
    pub metadata: RunMetadata,
}

impl EvalReport {
    pub fn row(&self, direction: &Direction, system: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| &r.direction == direction && r.system == system)
    }

    pub fn delta(&self, direction: &Direction, system: &str, metric: Metric) -> Option<&metrics::ScoreDelta> {
        self.deltas
            .iter()
            .find(|d| &d.direction == direction && d.delta.system_a == system && d.delta.metric == metric)
            .map(|d| &d.delta)
    }

    pub fn score_count(&self) -> usize {
        self.rows.iter().map(|r| r.comet.is_some() as usize + r.rouge_l.is_some() as usize).sum()
    }
}

fn conventions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("rouge_l".to_string(), metrics::ROUGE_CONVENTION.to_string()),
        ("comet".to_string(), "100 x service system_score (wmt22-comet-da)".to_string()),
        ("delta".to_string(), "system - baseline, rounded to 2 decimals".to_string()),
    ])
}

pub fn build_scorer(spec: &ScorerSpec) -> Option<(Box<dyn CometScorer>, usize)> {
    match spec {
        ScorerSpec::Disabled => None,
        ScorerSpec::Mock { scorer } => Some((Box::new(scorer.clone()), metrics::comet::DEFAULT_BATCH_CAP)),
        ScorerSpec::Http { url, batch_cap } => {
            Some((Box::new(HttpScorer::new(url.clone(), std::time::Duration::from_secs(600))), *batch_cap))
        }
        ScorerSpec::Auto => std::env::var(SCORER_URL_ENV).ok().filter(|u| !u.is_empty()).map(|url| {
            (
                Box::new(HttpScorer::new(url, std::time::Duration::from_secs(600))) as Box<dyn CometScorer>,
                metrics::comet::DEFAULT_BATCH_CAP,
            )
        }),
    }
}

/// Builds the backend a live system talks to.
pub fn build_backend(
    spec: &BackendSpec,
    gateway: &crate::gateway::GatewayConfig,
) -> Result<Arc<dyn Backend>, ExperimentError> {
    match spec {
        BackendSpec::Http => {
            Ok(Arc::new(HttpBackend::new(&gateway.base_url, &gateway.api_key_env, gateway.request_timeout())))
        }
        BackendSpec::Scripted { script, script_path } => {
            let spec: ScriptSpec = match (script, script_path) {
                (Some(s), _) => s.clone(),
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|source| ExperimentError::Io { path: path.clone(), source })?;
                    serde_json::from_str(&text)
                        .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?
                }
                (None, None) => {
                    return Err(ExperimentError::Config("scripted backend needs script or script_path".into()))
                }
            };
            Ok(Arc::new(ScriptedBackend::from_spec(spec)))
        }
    }
}

/// Loads the test corpus for one direction, applying its split if any.
pub fn load_test_corpus(spec: &DirectionSpec) -> Result<ParallelCorpus, ExperimentError> {
    let path = spec
        .test_path
        .as_ref()
        .ok_or_else(|| ExperimentError::Config(format!("direction {} has no test_path", spec.direction)))?;
    let loaded = load_parallel(path, spec.tgt_path.as_deref(), spec.format, spec.direction.clone())?;
    Ok(match &spec.split {
        Some(split) => corpus::split(&loaded.corpus, split)?.1,
        None => loaded.corpus,
    })
}

fn score_results(
    results: &[TranslationResult],
    test: &ParallelCorpus,
    scorer: Option<&(Box<dyn CometScorer>, usize)>,
    system: &str,
    failures: &mut Vec<String>,
) -> (Option<CorpusScore>, Option<CorpusScore>) {
    let refs: BTreeMap<u64, String> = test.pairs().iter().map(|p| (p.id, p.tgt_text.clone())).collect();
    let rouge = match corpus_rouge(results, &refs, test.direction().tgt()) {
        Ok(mut s) => {
            s.system = system.to_string();
            s.test_checksum = Some(test.checksum().to_string());
            Some(s)
        }
        Err(e) => {
            failures.push(format!("rouge_l: {e}"));
            None
        }
    };
    let comet = scorer.and_then(|(scorer, cap)| {
        if let Some(r) = results.iter().find(|r| r.failed()) {
            failures.push(format!("comet: skipped, pair {} has no hypothesis", r.pair_id));
            return None;
        }
        let items: Vec<CometItem> = results
            .iter()
            .map(|r| CometItem { src: r.src.clone(), mt: r.hypothesis.clone(), reference: r.reference.clone() })
            .collect();
        match comet_batch(&items, scorer.as_ref(), *cap) {
            Ok(mut s) => {
                s.system = system.to_string();
                s.test_checksum = Some(test.checksum().to_string());
                Some(s)
            }
            Err(e) => {
                failures.push(format!("comet: {e}"));
                None
            }
        }
    });
    (comet, rouge)
}

/// Runs the full (direction × system) matrix and assembles the report.
/// Translation runs are saved under `<output_dir>/runs/`.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<EvalReport, ExperimentError> {
    cfg.validate()?;
    let baseline = cfg.baseline_label().expect("validated non-empty").to_string();
    let scorer = build_scorer(&cfg.scorer);
    let cache = Arc::new(match &cfg.cache_dir {
        Some(dir) => ResponseCache::on_disk(dir).map_err(|source| ExperimentError::Io { path: dir.clone(), source })?,
        None => ResponseCache::in_memory(),
    });

    let any_live = cfg.systems.iter().any(|s| matches!(s.source, SystemSource::Live { .. }));
    let mut tests: BTreeMap<Direction, ParallelCorpus> = BTreeMap::new();
    if any_live {
        for d in &cfg.directions {
            tests.insert(d.direction.clone(), load_test_corpus(d)?);
        }
    }

    let mut rows = Vec::new();
    let mut runs: BTreeMap<(Direction, String), TranslateRun> = BTreeMap::new();
    let mut models = BTreeMap::new();
    let mut temperatures = BTreeMap::new();

    for system in &cfg.systems {
        match &system.source {
            SystemSource::Stored { scores } => {
                for d in &cfg.directions {
                    let stored = scores.get(&d.direction);
                    let make = |metric, v: Option<f64>| {
                        v.map(|v| CorpusScore::stored(metric, &system.label, v, stored.map_or(0, |s| s.n)))
                    };
                    let mut failures = Vec::new();
                    if stored.is_none() {
                        failures.push("no stored scores for this direction".to_string());
                    }
                    rows.push(ReportRow {
                        direction: d.direction.clone(),
                        system: system.label.clone(),
                        scheme: system.scheme.clone(),
                        mode: None,
                        comet: make(Metric::Comet, stored.and_then(|s| s.comet)),
                        rouge_l: make(Metric::RougeL, stored.and_then(|s| s.rouge_l)),
                        failures,
                        stats: None,
                    });
                }
            }
            SystemSource::Live { mode, gateway, backend } => {
                models.insert(system.label.clone(), gateway.model_name.clone());
                temperatures.insert(system.label.clone(), gateway.temperature);
                let backend = build_backend(backend, gateway)?;
                let gw = Gateway::with_cache(gateway.clone(), backend, cache.clone())
                    .map_err(|e| ExperimentError::Config(format!("{}: {e}", system.label)))?;
                for d in &cfg.directions {
                    let test = &tests[&d.direction];
                    let shots = if *mode == Mode::Fewshot { d.shots.as_slice() } else { &[] };
                    let before = gw.stats();
                    let mut failures = Vec::new();
                    let run = Driver::new(&gw, *mode, shots).and_then(|drv| {
                        let ledger = crate::translate::RunLedger::new(test, *mode, &gateway.model_name);
                        match TranslateRun::load(&TranslateRun::run_dir(&cfg.output_dir, &ledger.run_id)) {
                            Ok(existing) => drv.resume(existing, test),
                            Err(_) => drv.run(test),
                        }
                    });
                    let run = match run {
                        Ok(run) => run,
                        Err(e) => {
                            failures.push(format!("translate: {e}"));
                            rows.push(ReportRow {
                                direction: d.direction.clone(),
                                system: system.label.clone(),
                                scheme: system.scheme.clone(),
                                mode: Some(*mode),
                                comet: None,
                                rouge_l: None,
                                failures,
                                stats: None,
                            });
                            continue;
                        }
                    };
                    if let Err(e) = run.save(&cfg.output_dir) {
                        failures.push(format!("saving run: {e}"));
                    }
                    let after = gw.stats();
                    for (id, reason) in &run.ledger.failures {
                        failures.push(format!("pair {id}: {reason}"));
                    }
                    let stats = CellStats {
                        sentences: test.len(),
                        gateway_requests: after.requests - before.requests,
                        backend_calls: after.backend_attempts - before.backend_attempts,
                        cache_hits: after.cache_hits - before.cache_hits,
                        failed_pairs: run.results.iter().filter(|r| r.failed()).count(),
                        fallbacks: run.results.iter().filter(|r| r.fallback).count(),
                        intermediates: run.results.iter().filter(|r| r.intermediate_paraphrase.is_some()).count(),
                        run_id: run.ledger.run_id.clone(),
                    };
                    let (comet, rouge_l) =
                        score_results(&run.results, test, scorer.as_ref(), &system.label, &mut failures);
                    rows.push(ReportRow {
                        direction: d.direction.clone(),
                        system: system.label.clone(),
                        scheme: system.scheme.clone(),
                        mode: Some(*mode),
                        comet,
                        rouge_l,
                        failures,
                        stats: Some(stats),
                    });
                    runs.insert((d.direction.clone(), system.label.clone()), run);
                }
            }
        }
    }

    let directions: Vec<Direction> = cfg.directions.iter().map(|d| d.direction.clone()).collect();
    let systems: Vec<String> = cfg.systems.iter().map(|s| s.label.clone()).collect();
    let deltas = compute_deltas(&rows, &directions, &systems, &baseline);
    let cases = collect_cases(&runs, &directions, &systems, &baseline, cfg.case_limit);
    Ok(EvalReport {
        metadata: RunMetadata {
            conventions: conventions(),
            template_version: TEMPLATE_VERSION,
            test_checksums: tests.iter().map(|(d, c)| (d.clone(), c.checksum().to_string())).collect(),
            models,
            temperatures,
        },
        directions,
        systems,
        baseline,
        rows,
        deltas,
        cases,
    })
}

/// Deltas of every non-baseline system against the baseline, per direction
/// and metric, wherever both scores exist.
pub fn compute_deltas(
    rows: &[ReportRow],
    directions: &[Direction],
    systems: &[String],
    baseline: &str,
) -> Vec<DirectionalDelta> {
    let find = |d: &Direction, s: &str| rows.iter().find(|r| &r.direction == d && r.system == s);
    let mut out = Vec::new();
    for d in directions {
        let Some(base) = find(d, baseline) else { continue };
        for s in systems.iter().filter(|s| s.as_str() != baseline) {
            let Some(row) = find(d, s) else { continue };
            for metric in [Metric::Comet, Metric::RougeL] {
                if let (Some(a), Some(b)) = (row.score(metric), base.score(metric)) {
                    match metrics::delta(a, b) {
                        Ok(delta) => out.push(DirectionalDelta { direction: d.clone(), delta }),
                        Err(e) => log::warn!("{d} {s} {metric}: no delta: {e}"),
                    }
                }
            }
        }
    }
    out
}

fn collect_cases(
    runs: &BTreeMap<(Direction, String), TranslateRun>,
    directions: &[Direction],
    systems: &[String],
    baseline: &str,
    limit: usize,
) -> Vec<CaseStudy> {
    let mut out = Vec::new();
    for d in directions {
        let Some(base) = runs.get(&(d.clone(), baseline.to_string())) else { continue };
        for s in systems.iter().filter(|s| s.as_str() != baseline) {
            let Some(run) = runs.get(&(d.clone(), s.clone())) else { continue };
            let cases = base
                .results
                .iter()
                .filter(|b| !b.failed())
                .filter_map(|b| run.results.iter().find(|r| r.pair_id == b.pair_id && !r.failed()).map(|r| (b, r)))
                .take(limit)
                .map(|(b, r)| CaseStudy {
                    direction: d.clone(),
                    pair_id: b.pair_id,
                    src: b.src.clone(),
                    tgt: b.reference.clone(),
                    baseline_system: baseline.to_string(),
                    baseline_hypothesis: b.hypothesis.clone(),
                    system: s.clone(),
                    hypothesis: r.hypothesis.clone(),
                    intermediate: r.intermediate_paraphrase.clone(),
                });
            out.extend(cases);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stored_cfg(json: &str) -> ExperimentConfig {
        serde_json::from_str(json).unwrap()
    }

    #[test]
    fn no_systems() {
        let cfg = stored_cfg(r#"{"directions":[{"direction":"zh-en"}],"systems":[]}"#);
        assert!(matches!(run_matrix(&cfg), Err(ExperimentError::NoSystems)));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let cfg = stored_cfg(
            r#"{"directions":[{"direction":"zh-en"}],"systems":[
                {"label":"a","kind":"stored","scores":{}},
                {"label":"a","kind":"stored","scores":{}}]}"#,
        );
        assert!(matches!(run_matrix(&cfg), Err(ExperimentError::DuplicateLabel(_))));
    }

    #[test]
    fn stored_zh_en_deltas() {
        let cfg = stored_cfg(
            r#"{"directions":[{"direction":"zh-en"}],"scorer":{"kind":"disabled"},"systems":[
                {"label":"LLaMA-3-8B","kind":"stored","scores":{"zh-en":{"comet":79.65,"rouge_l":47.85}}},
                {"label":"ParaAlign Translator","kind":"stored","scores":{"zh-en":{"comet":79.90,"rouge_l":50.67}}}]}"#,
        );
        let report = run_matrix(&cfg).unwrap();
        let d: Direction = "zh-en".parse().unwrap();
        assert_eq!(report.delta(&d, "ParaAlign Translator", Metric::Comet).unwrap().signed(), "+0.25");
        assert_eq!(report.delta(&d, "ParaAlign Translator", Metric::RougeL).unwrap().signed(), "+2.82");
        assert_eq!(report.deltas.len(), 2);
    }

    #[test]
    fn missing_stored_direction_is_a_hole() {
        let cfg = stored_cfg(
            r#"{"directions":[{"direction":"zh-en"},{"direction":"en-zh"}],"systems":[
                {"label":"a","kind":"stored","scores":{"zh-en":{"comet":1.0}}},
                {"label":"b","kind":"stored","scores":{"zh-en":{"comet":2.0}}}]}"#,
        );
        let report = run_matrix(&cfg).unwrap();
        let row = report.row(&"en-zh".parse().unwrap(), "a").unwrap();
        assert!(row.comet.is_none());
        assert_eq!(row.failures.len(), 1);
        assert_eq!(report.deltas.len(), 1);
    }
}
