//! `paraalign` command line.
//!
//! Subcommands read a JSON pipeline config (`--config`) and let flags
//! override it. Exit codes: 0 success, 1 invalid input or usage, 2 runtime
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{self, load_parallel, write_corpus, CorpusFormat, ParallelCorpus, SplitSpec};
use crate::dataset::{emit, write_dataset, ManifestInputs, MixSpec, DEFAULT_MIX_SEED};
use crate::digest::sha256_hex;
use crate::experiment::{
    self, build_backend, build_scorer, render_report, BackendSpec, EvalReport, ExperimentConfig, ReportFormat,
    ScorerSpec, SweepInputs, SweepScore, SystemSource,
};
use crate::gateway::{Backend, Gateway, GatewayConfig, ResponseCache, ScriptMode, ScriptSpec, DEFAULT_MODEL};
use crate::lang::Direction;
use crate::metrics::{self, comet_batch, corpus_rouge, CometItem};
use crate::prompt::{ShotPair, TEMPLATE_VERSION};
use crate::synthesis::{read_pairs, write_pairs, FilterPolicy, Synthesizer};
use crate::translate::{Driver, Mode, RunLedger, TranslateRun};

#[derive(Debug, Parser)]
#[command(name = "paraalign", version, about = "Paraphrase-aligned machine translation toolchain")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON pipeline config (an experiment config for run-matrix).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Translation mode: fewshot, fused or staged.
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Language direction, e.g. zh-en.
    #[arg(long, global = true)]
    direction: Option<Direction>,
    /// Number of paraphrase records mixed into the dataset.
    #[arg(long, global = true)]
    n_para: Option<usize>,
    /// Seed for the split and the dataset mix.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the planned gateway call count and exit without calling.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Replace the LLM endpoint with a scripted one: echo, reverse_words,
    /// refuse, or a path to a script JSON file.
    #[arg(long, global = true, value_name = "MODE")]
    mock_backend: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate a parallel corpus.
    Ingest(CorpusArgs),
    /// Split a corpus into train and test halves.
    Split(CorpusArgs),
    /// Back-translate the target side into paraphrase pairs.
    Synthesize,
    /// Write the instruction-tuning dataset.
    EmitDataset,
    /// Write nested datasets for a data-size sweep.
    Sweep,
    /// Translate a test set.
    Translate,
    /// Score a saved translation run.
    Score {
        /// Run directory holding ledger.json and results.jsonl.
        #[arg(long)]
        run: PathBuf,
    },
    /// Render a report.json into markdown, csv and json.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the full experiment matrix from an experiment config.
    RunMatrix,
}

#[derive(Debug, Args)]
struct CorpusArgs {
    /// Source file (or the single bitext file).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Target file for paired plaintext.
    #[arg(long)]
    tgt: Option<PathBuf>,
    #[arg(long)]
    format: Option<CorpusFormat>,
    #[arg(long)]
    test_size: Option<usize>,
    /// Drop duplicate pairs while ingesting.
    #[arg(long)]
    dedupe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSource {
    pub path: PathBuf,
    #[serde(default)]
    pub tgt_path: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::TsvBitext
}

/// Settings shared by the single-step subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub direction: Option<Direction>,
    pub corpus: Option<CorpusSource>,
    /// When set, the corpus is split and subcommands use the half they need.
    pub split: Option<SplitSpec>,
    pub gateway: GatewayConfig,
    pub backend: BackendSpec,
    pub cache_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub mode: Option<Mode>,
    /// Few-shot examples for fewshot translation, source first.
    pub shots: Vec<ShotPair>,
    /// Few-shot examples for back-translation, target first.
    pub synthesis_shots: Vec<ShotPair>,
    pub policy: FilterPolicy,
    /// Paraphrase pool JSONL; defaults to `<output_dir>/pairs.jsonl`.
    pub pool_path: Option<PathBuf>,
    pub n_paraphrase: usize,
    pub mix_seed: u64,
    pub shuffle_final: bool,
    pub base_model: String,
    pub sweep_sizes: Vec<usize>,
    pub sweep_scores: BTreeMap<usize, SweepScore>,
    pub scorer: ScorerSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            direction: None,
            corpus: None,
            split: None,
            gateway: GatewayConfig::default(),
            backend: BackendSpec::default(),
            cache_dir: None,
            output_dir: PathBuf::from("out"),
            mode: None,
            shots: Vec::new(),
            synthesis_shots: Vec::new(),
            policy: FilterPolicy::default(),
            pool_path: None,
            n_paraphrase: 0,
            mix_seed: DEFAULT_MIX_SEED,
            shuffle_final: true,
            base_model: DEFAULT_MODEL.to_string(),
            sweep_sizes: experiment::DEFAULT_SWEEP_SIZES.to_vec(),
            sweep_scores: BTreeMap::new(),
            scorer: ScorerSpec::default(),
        }
    }
}

impl PipelineConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        if let Some(c) = &mut self.corpus {
            fix(&mut c.path);
            if let Some(t) = &mut c.tgt_path {
                fix(t);
            }
        }
        for p in [&mut self.cache_dir, &mut self.pool_path].into_iter().flatten() {
            fix(p);
        }
        if let BackendSpec::Scripted { script_path: Some(p), .. } = &mut self.backend {
            fix(p);
        }
    }
}

#[derive(Debug)]
enum CliError {
    Invalid(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn corpus_err(e: corpus::CorpusError) -> CliError {
    match e {
        corpus::CorpusError::Io { .. } => runtime(e),
        _ => invalid(e),
    }
}

fn experiment_err(e: experiment::ExperimentError) -> CliError {
    use experiment::ExperimentError as E;
    match e {
        E::Io { .. } | E::Dataset(crate::dataset::DatasetError::IoFailure { .. }) => runtime(e),
        E::Corpus(c) => corpus_err(c),
        _ => invalid(e),
    }
}

/// Formats a count with comma thousands separators.
pub fn group_thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("paraalign: {e}");
            e.code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let Cli { common, command } = cli;
    match command {
        Command::RunMatrix => run_matrix(&common),
        Command::Report { input } => report(&common, &input),
        command => {
            let cfg = pipeline_config(&common)?;
            match command {
                Command::Ingest(args) => ingest(&cfg, &args),
                Command::Split(args) => split(&cfg, &args, common.seed),
                Command::Synthesize => synthesize(&cfg, &common),
                Command::EmitDataset => emit_dataset(&cfg),
                Command::Sweep => sweep(&cfg),
                Command::Translate => translate(&cfg, &common),
                Command::Score { run } => score(&cfg, &run),
                Command::RunMatrix | Command::Report { .. } => unreachable!(),
            }
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn pipeline_config(common: &Common) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => {
            let mut cfg: PipelineConfig = read_json(path)?;
            cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
            cfg
        }
        None => PipelineConfig::default(),
    };
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(d) = &common.direction {
        cfg.direction = Some(d.clone());
    }
    if let Some(m) = common.mode {
        cfg.mode = Some(m);
    }
    if let Some(n) = common.n_para {
        cfg.n_paraphrase = n;
    }
    if let Some(seed) = common.seed {
        cfg.mix_seed = seed;
        if let Some(s) = &mut cfg.split {
            s.seed = seed;
        }
    }
    if let Some(spec) = &common.mock_backend {
        cfg.backend = mock_backend(spec)?;
    }
    cfg.gateway.validate().map_err(invalid)?;
    cfg.policy.validate().map_err(invalid)?;
    Ok(cfg)
}

fn mock_backend(spec: &str) -> Result<BackendSpec, CliError> {
    let mode = match spec {
        "echo" => ScriptMode::Echo,
        "reverse_words" | "reverse-words" => ScriptMode::ReverseWords,
        "refuse" => ScriptMode::Refuse,
        path => return Ok(BackendSpec::Scripted { script: None, script_path: Some(PathBuf::from(path)) }),
    };
    Ok(BackendSpec::Scripted {
        script: Some(ScriptSpec { default: mode, per_template: BTreeMap::new() }),
        script_path: None,
    })
}

fn direction(cfg: &PipelineConfig) -> Result<Direction, CliError> {
    cfg.direction.clone().ok_or_else(|| invalid("no direction given (--direction or config)"))
}

fn load_corpus(cfg: &PipelineConfig, args: Option<&CorpusArgs>) -> Result<corpus::Loaded, CliError> {
    let direction = direction(cfg)?;
    let mut source = cfg.corpus.clone();
    if let Some(args) = args {
        if let Some(input) = &args.input {
            source = Some(CorpusSource {
                path: input.clone(),
                tgt_path: args.tgt.clone(),
                format: args.format.unwrap_or(if args.tgt.is_some() {
                    CorpusFormat::PairedPlaintext
                } else {
                    CorpusFormat::TsvBitext
                }),
            });
        } else if let (Some(s), Some(f)) = (&mut source, args.format) {
            s.format = f;
        }
    }
    let source = source.ok_or_else(|| invalid("no corpus given (--input or config corpus.path)"))?;
    load_parallel(&source.path, source.tgt_path.as_deref(), source.format, direction).map_err(corpus_err)
}

/// The (train, test) halves; without a split both are the whole corpus.
fn halves(cfg: &PipelineConfig) -> Result<(ParallelCorpus, ParallelCorpus), CliError> {
    let loaded = load_corpus(cfg, None)?;
    match &cfg.split {
        Some(spec) => corpus::split(&loaded.corpus, spec).map_err(corpus_err),
        None => Ok((loaded.corpus.clone(), loaded.corpus)),
    }
}

fn gateway(cfg: &PipelineConfig) -> Result<Gateway, CliError> {
    let backend: Arc<dyn Backend> = build_backend(&cfg.backend, &cfg.gateway).map_err(experiment_err)?;
    let cache = match &cfg.cache_dir {
        Some(dir) => ResponseCache::on_disk(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?,
        None => ResponseCache::on_disk(cfg.output_dir.join("cache"))
            .map_err(|e| runtime(format!("{}: {e}", cfg.output_dir.display())))?,
    };
    Gateway::with_cache(cfg.gateway.clone(), backend, Arc::new(cache)).map_err(invalid)
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        ensure_dir(dir)?;
    }
    std::fs::write(path, bytes).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Writes `<output_dir>/<name>.manifest.json` with the seeds, digests and
/// conventions of a run plus subcommand-specific fields.
fn write_manifest(
    out: &Path,
    name: &str,
    config: &impl Serialize,
    extra: serde_json::Value,
) -> Result<PathBuf, CliError> {
    let config_json = serde_json::to_vec(config).expect("config serializes");
    let mut manifest = json!({
        "subcommand": name,
        "tool_version": env!("CARGO_PKG_VERSION"),
        "template_version": TEMPLATE_VERSION,
        "config_digest": sha256_hex(&config_json),
        "conventions": {
            "rouge_l": metrics::ROUGE_CONVENTION,
            "delta": "system - baseline, rounded to 2 decimals",
        },
    });
    if let (Some(m), serde_json::Value::Object(extra)) = (manifest.as_object_mut(), extra) {
        m.extend(extra);
    }
    let path = out.join(format!("{name}.manifest.json"));
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    write_file(&path, bytes)?;
    Ok(path)
}

fn ingest(cfg: &PipelineConfig, args: &CorpusArgs) -> Result<(), CliError> {
    let loaded = load_corpus(cfg, Some(args))?;
    let (corpus, removed) = if args.dedupe { corpus::dedupe(&loaded.corpus) } else { (loaded.corpus, 0) };
    let out = cfg.output_dir.join("corpus.tsv");
    ensure_dir(&cfg.output_dir)?;
    write_corpus(&corpus, &out, None, CorpusFormat::TsvBitext).map_err(corpus_err)?;
    write_manifest(
        &cfg.output_dir,
        "ingest",
        cfg,
        json!({
            "direction": corpus.direction(),
            "pairs": corpus.len(),
            "skipped_empty": loaded.skipped,
            "duplicates_removed": removed,
            "checksum": corpus.checksum(),
            "output": out,
        }),
    )?;
    println!(
        "ingested {} pairs ({} empty skipped, {} duplicates removed)",
        group_thousands(corpus.len()),
        loaded.skipped,
        removed
    );
    Ok(())
}

fn split(cfg: &PipelineConfig, args: &CorpusArgs, seed: Option<u64>) -> Result<(), CliError> {
    let loaded = load_corpus(cfg, Some(args))?;
    let mut spec = cfg.split.clone().unwrap_or(SplitSpec {
        test_size: 0,
        seed: corpus::DEFAULT_SPLIT_SEED,
        strategy: Default::default(),
    });
    if let Some(n) = args.test_size {
        spec.test_size = n;
    }
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (train, test) = corpus::split(&loaded.corpus, &spec).map_err(corpus_err)?;
    ensure_dir(&cfg.output_dir)?;
    let train_path = cfg.output_dir.join("train.tsv");
    let test_path = cfg.output_dir.join("test.tsv");
    write_corpus(&train, &train_path, None, CorpusFormat::TsvBitext).map_err(corpus_err)?;
    write_corpus(&test, &test_path, None, CorpusFormat::TsvBitext).map_err(corpus_err)?;
    write_manifest(
        &cfg.output_dir,
        "split",
        cfg,
        json!({
            "split": spec,
            "source_checksum": loaded.corpus.checksum(),
            "train": {"pairs": train.len(), "checksum": train.checksum(), "path": train_path},
            "test": {"pairs": test.len(), "checksum": test.checksum(), "path": test_path},
        }),
    )?;
    println!("train {} / test {}", group_thousands(train.len()), group_thousands(test.len()));
    Ok(())
}

fn synthesize(cfg: &PipelineConfig, common: &Common) -> Result<(), CliError> {
    let (train, _) = halves(cfg)?;
    if cfg.synthesis_shots.is_empty() {
        return Err(invalid("synthesis needs synthesis_shots in the config"));
    }
    if common.dry_run {
        println!("planned calls: {}", group_thousands(train.len()));
        return Ok(());
    }
    let gw = gateway(cfg)?;
    let synth = Synthesizer::new(&gw, &cfg.synthesis_shots, cfg.policy.clone());
    let (pairs, report) = synth.run(&train).map_err(|e| match e {
        crate::synthesis::SynthesisError::EmptyShotList | crate::synthesis::SynthesisError::EmptyBitext => invalid(e),
        _ => runtime(e),
    })?;
    let pool_path = cfg.pool_path.clone().unwrap_or_else(|| cfg.output_dir.join("pairs.jsonl"));
    write_pairs(&pairs, &pool_path).map_err(runtime)?;
    let stats = gw.stats();
    write_manifest(
        &cfg.output_dir,
        "synthesize",
        cfg,
        json!({
            "direction": train.direction(),
            "bitext_checksum": train.checksum(),
            "generator_model": cfg.gateway.model_name,
            "temperature": cfg.gateway.temperature,
            "pool_path": pool_path,
            "pool_digest": crate::dataset::pool_digest(&pairs),
            "report": report,
            "backend_calls": stats.backend_attempts,
        }),
    )?;
    println!(
        "generated {} of {} ({} filtered, {} failed, {} cached)",
        group_thousands(report.generated),
        group_thousands(report.requested),
        report.filtered_total(),
        report.gateway_failures,
        report.cache_hits
    );
    Ok(())
}

fn read_pool(cfg: &PipelineConfig) -> Result<Vec<crate::synthesis::ParaphrasePair>, CliError> {
    let path = cfg.pool_path.clone().unwrap_or_else(|| cfg.output_dir.join("pairs.jsonl"));
    if !path.exists() {
        return Ok(Vec::new());
    }
    read_pairs(&path).map_err(invalid)
}

fn emit_dataset(cfg: &PipelineConfig) -> Result<(), CliError> {
    let (train, _) = halves(cfg)?;
    let pool = read_pool(cfg)?;
    let mix = MixSpec { n_paraphrase: cfg.n_paraphrase, seed: cfg.mix_seed, shuffle_final: cfg.shuffle_final };
    let records = emit(&train, &pool, &mix).map_err(invalid)?;
    let path = cfg.output_dir.join("dataset.jsonl");
    let manifest = write_dataset(&records, &path, &ManifestInputs::new(&train, &pool, mix, &cfg.base_model)).map_err(
        |e| match e {
            crate::dataset::DatasetError::IoFailure { .. } => runtime(e),
            _ => invalid(e),
        },
    )?;
    println!(
        "wrote {} records to {} (manifest {})",
        group_thousands(manifest.records),
        path.display(),
        crate::dataset::manifest_path(&path).display()
    );
    Ok(())
}

fn sweep(cfg: &PipelineConfig) -> Result<(), CliError> {
    let pool = read_pool(cfg)?;
    let train = match &cfg.corpus {
        Some(_) if !pool.is_empty() => Some(halves(cfg)?.0),
        _ => None,
    };
    let inputs = SweepInputs {
        bitext: train.as_ref(),
        pool: &pool,
        sizes: &cfg.sweep_sizes,
        seed: cfg.mix_seed,
        base_model: cfg.base_model.clone(),
        scores: cfg.sweep_scores.clone(),
    };
    let table = experiment::run_sweep(&inputs, &cfg.output_dir).map_err(experiment_err)?;
    write_manifest(&cfg.output_dir, "sweep", cfg, json!({ "table": table }))?;
    print!("{}", table.to_csv());
    Ok(())
}

fn translate(cfg: &PipelineConfig, common: &Common) -> Result<(), CliError> {
    let (_, test) = halves(cfg)?;
    let mode = cfg.mode.ok_or_else(|| invalid("no mode given (--mode or config)"))?;
    let shots: &[ShotPair] = if mode == Mode::Fewshot { &cfg.shots } else { &[] };
    if common.dry_run {
        println!("planned calls: {}", group_thousands(test.len() * mode.calls_per_sentence()));
        return Ok(());
    }
    let gw = gateway(cfg)?;
    let driver = Driver::new(&gw, mode, shots).map_err(invalid)?;
    let ledger = RunLedger::new(&test, mode, &cfg.gateway.model_name);
    let run = match TranslateRun::load(&TranslateRun::run_dir(&cfg.output_dir, &ledger.run_id)) {
        Ok(prior) => driver.resume(prior, &test),
        Err(_) => driver.run(&test),
    }
    .map_err(runtime)?;
    let dir = run.save(&cfg.output_dir).map_err(runtime)?;
    let stats = gw.stats();
    write_manifest(
        &cfg.output_dir,
        "translate",
        cfg,
        json!({
            "run_id": run.ledger.run_id,
            "run_dir": dir,
            "mode": mode,
            "model": cfg.gateway.model_name,
            "temperature": cfg.gateway.temperature,
            "test_checksum": test.checksum(),
            "completed": run.ledger.completed.len(),
            "failures": run.ledger.failures.len(),
            "backend_calls": stats.backend_attempts,
            "cache_hits": stats.cache_hits,
        }),
    )?;
    println!(
        "{}: {} translated, {} failed ({})",
        run.ledger.run_id,
        group_thousands(run.ledger.completed.len()),
        run.ledger.failures.len(),
        dir.display()
    );
    if run.ledger.failures.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("{} pair(s) failed; re-run to retry them", run.ledger.failures.len())))
    }
}

fn score(cfg: &PipelineConfig, run_dir: &Path) -> Result<(), CliError> {
    let run = TranslateRun::load(run_dir).map_err(invalid)?;
    let refs: BTreeMap<u64, String> = run.results.iter().map(|r| (r.pair_id, r.reference.clone())).collect();
    let label = run.ledger.run_id.clone();
    let rouge = corpus_rouge(&run.results, &refs, run.ledger.direction.tgt()).map_err(invalid)?.with_system(&label);
    let comet = match build_scorer(&cfg.scorer) {
        Some((scorer, cap)) => {
            let items: Vec<CometItem> = run
                .results
                .iter()
                .map(|r| CometItem { src: r.src.clone(), mt: r.hypothesis.clone(), reference: r.reference.clone() })
                .collect();
            Some(comet_batch(&items, scorer.as_ref(), cap).map_err(runtime)?.with_system(&label))
        }
        None => None,
    };
    let out = json!({ "run_id": label, "rouge_l": rouge, "comet": comet });
    write_file(&cfg.output_dir.join("scores.json"), serde_json::to_vec_pretty(&out).expect("scores serialize"))?;
    write_manifest(
        &cfg.output_dir,
        "score",
        cfg,
        json!({ "run_id": run.ledger.run_id, "test_checksum": run.ledger.test_checksum }),
    )?;
    println!("ROUGE-L {:.2}", rouge.value);
    if let Some(c) = comet {
        println!("COMET {:.2}", c.value);
    }
    Ok(())
}

fn report(common: &Common, input: &Path) -> Result<(), CliError> {
    let report: EvalReport = read_json(input)?;
    let out = common.output_dir.clone().unwrap_or_else(|| input.parent().unwrap_or(Path::new(".")).to_path_buf());
    let written = render_report(&report, &ReportFormat::ALL, &out).map_err(experiment_err)?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(())
}

fn run_matrix(common: &Common) -> Result<(), CliError> {
    let path = common.config.as_ref().ok_or_else(|| invalid("run-matrix needs --config"))?;
    let mut cfg = ExperimentConfig::load(path).map_err(experiment_err)?;
    if let Some(d) = &common.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(d) = &common.direction {
        cfg.directions.retain(|s| &s.direction == d);
        if cfg.directions.is_empty() {
            return Err(invalid(format!("direction {d} is not in the config")));
        }
    }
    if let Some(spec) = &common.mock_backend {
        let mock = mock_backend(spec)?;
        for s in &mut cfg.systems {
            if let SystemSource::Live { backend, .. } = &mut s.source {
                *backend = mock.clone();
            }
        }
    }
    if let Some(m) = common.mode {
        for s in &mut cfg.systems {
            if let SystemSource::Live { mode, .. } = &mut s.source {
                *mode = m;
            }
        }
    }
    cfg.validate().map_err(experiment_err)?;
    if common.dry_run {
        let mut planned = 0;
        for d in &cfg.directions {
            let live: Vec<Mode> = cfg
                .systems
                .iter()
                .filter_map(|s| match &s.source {
                    SystemSource::Live { mode, .. } => Some(*mode),
                    SystemSource::Stored { .. } => None,
                })
                .collect();
            if live.is_empty() {
                continue;
            }
            let n = experiment::load_test_corpus(d).map_err(experiment_err)?.len();
            planned += live.iter().map(|m| n * m.calls_per_sentence()).sum::<usize>();
        }
        println!("planned calls: {}", group_thousands(planned));
        return Ok(());
    }
    let report = experiment::run_matrix(&cfg).map_err(experiment_err)?;
    render_report(&report, &ReportFormat::ALL, &cfg.output_dir).map_err(experiment_err)?;
    write_manifest(
        &cfg.output_dir,
        "run-matrix",
        &cfg,
        json!({
            "test_checksums": report.metadata.test_checksums,
            "models": report.metadata.models,
            "temperatures": report.metadata.temperatures,
            "run_ids": report.rows.iter().filter_map(|r| r.stats.as_ref().map(|s| s.run_id.clone())).collect::<Vec<_>>(),
            "conventions_full": report.metadata.conventions,
        }),
    )?;
    let holes = report.rows.iter().filter(|r| !r.failures.is_empty()).count();
    println!(
        "{} rows, {} scores, {} deltas written to {}",
        report.rows.len(),
        report.score_count(),
        report.deltas.len(),
        cfg.output_dir.display()
    );
    if holes > 0 {
        eprintln!("paraalign: {holes} cell(s) have failures; see report.md");
    }
    Ok(())
}
