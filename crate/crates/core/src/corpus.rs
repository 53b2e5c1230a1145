//! Parallel corpus ingestion, splitting and deduplication.
//!
//! Three on-disk layouts are understood:
//!
//! * `tsv_bitext`: one record per line, source and target separated by a
//!   single tab.
//! * `jsonl_bitext`: one JSON object per line with `"src"`, `"tgt"` and an
//!   optional `"id"`.
//! * `paired_plaintext`: two files where line `i` of each forms pair `i`
//!   (the FLORES layout).
//!
//! Text is stored verbatim. The only validity rule applied at ingestion is
//! that both sides are non-empty after trimming; failing records are skipped
//! and counted.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::digest::FieldHasher;
use crate::lang::{Direction, LangCode};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("line count mismatch: {src_lines} source lines vs {tgt_lines} target lines")]
    LineCountMismatch { src_lines: usize, tgt_lines: usize },
    #[error("malformed record at {path}:{line}: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },
    #[error("paired_plaintext requires a target file")]
    TargetFileRequired,
    #[error("test size {test_size} must be in 1..{corpus_size}")]
    SplitTooLarge { test_size: usize, corpus_size: usize },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    TsvBitext,
    JsonlBitext,
    PairedPlaintext,
}

impl FromStr for CorpusFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tsv_bitext" | "tsv" => Ok(Self::TsvBitext),
            "jsonl_bitext" | "jsonl" => Ok(Self::JsonlBitext),
            "paired_plaintext" | "plaintext" => Ok(Self::PairedPlaintext),
            other => Err(format!("unknown corpus format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginKind {
    Wmt,
    Flores,
    Other,
}

/// Where a pair came from: dataset family plus 1-based source-file line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub kind: OriginKind,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub id: u64,
    pub src_text: String,
    pub tgt_text: String,
    pub src_lang: LangCode,
    pub tgt_lang: LangCode,
    pub origin: Origin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pairs: Vec<ParallelPair>,
    direction: Direction,
    checksum: String,
}

impl ParallelCorpus {
    /// Builds a corpus from pairs, which must all share `direction`.
    pub fn new(direction: Direction, pairs: Vec<ParallelPair>) -> Self {
        debug_assert!(pairs.iter().all(|p| &p.src_lang == direction.src() && &p.tgt_lang == direction.tgt()));
        let checksum = checksum_of(&direction, &pairs);
        Self { pairs, direction, checksum }
    }

    /// Convenience constructor from bare sentence pairs; ids are 0..n-1.
    pub fn from_texts<S: Into<String>, T: Into<String>>(
        direction: Direction,
        texts: impl IntoIterator<Item = (S, T)>,
    ) -> Self {
        let pairs = texts
            .into_iter()
            .enumerate()
            .map(|(i, (s, t))| ParallelPair {
                id: i as u64,
                src_text: s.into(),
                tgt_text: t.into(),
                src_lang: direction.src().clone(),
                tgt_lang: direction.tgt().clone(),
                origin: Origin { kind: OriginKind::Other, line: i + 1 },
            })
            .collect();
        Self::new(direction, pairs)
    }

    pub fn pairs(&self) -> &[ParallelPair] {
        &self.pairs
    }

    pub fn direction(&self) -> &Direction {
        &self.direction
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.pairs.iter().map(|p| p.id).collect()
    }

    pub fn get(&self, id: u64) -> Option<&ParallelPair> {
        self.pairs.iter().find(|p| p.id == id)
    }
}

fn checksum_of(direction: &Direction, pairs: &[ParallelPair]) -> String {
    let mut h = FieldHasher::new();
    h.field(direction.to_string());
    for p in pairs {
        h.field(p.id.to_le_bytes()).field(&p.src_text).field(&p.tgt_text);
    }
    h.finish()
}

/// Outcome of [`load_parallel`]: the corpus and how many records failed
/// validation.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub corpus: ParallelCorpus,
    pub skipped: usize,
}

fn read_to_string(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })
}

fn split_lines(text: &str) -> Vec<&str> {
    text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l)).collect()
}

fn guess_origin(path: &Path) -> OriginKind {
    let name = path.to_string_lossy().to_ascii_lowercase();
    if name.contains("flores") {
        OriginKind::Flores
    } else if name.contains("wmt") {
        OriginKind::Wmt
    } else {
        OriginKind::Other
    }
}

#[derive(Deserialize)]
struct JsonlRecord {
    src: Option<String>,
    tgt: Option<String>,
    #[serde(default)]
    #[allow(dead_code)]
    id: Option<serde_json::Value>,
}

/// Loads a parallel corpus. Ids are assigned `0..n-1` in file order over the
/// records that pass validation.
pub fn load_parallel(
    src_path: &Path,
    tgt_path: Option<&Path>,
    format: CorpusFormat,
    direction: Direction,
) -> Result<Loaded> {
    let origin_kind = guess_origin(src_path);
    let mut raw: Vec<(usize, String, String)> = Vec::new();

    match format {
        CorpusFormat::TsvBitext => {
            let text = read_to_string(src_path)?;
            for (i, line) in split_lines(&text).into_iter().enumerate() {
                if line.is_empty() {
                    continue;
                }
                let fields: Vec<&str> = line.split('\t').collect();
                if fields.len() != 2 {
                    return Err(CorpusError::MalformedRecord {
                        path: src_path.to_path_buf(),
                        line: i + 1,
                        reason: format!("expected 2 tab-separated fields, found {}", fields.len()),
                    });
                }
                raw.push((i + 1, fields[0].to_string(), fields[1].to_string()));
            }
        }
        CorpusFormat::JsonlBitext => {
            let text = read_to_string(src_path)?;
            for (i, line) in split_lines(&text).into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let malformed =
                    |reason: String| CorpusError::MalformedRecord { path: src_path.to_path_buf(), line: i + 1, reason };
                let rec: JsonlRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
                let src = rec.src.ok_or_else(|| malformed("missing \"src\"".into()))?;
                let tgt = rec.tgt.ok_or_else(|| malformed("missing \"tgt\"".into()))?;
                raw.push((i + 1, src, tgt));
            }
        }
        CorpusFormat::PairedPlaintext => {
            let tgt_path = tgt_path.ok_or(CorpusError::TargetFileRequired)?;
            let src_text = read_to_string(src_path)?;
            let tgt_text = read_to_string(tgt_path)?;
            let src_lines = split_lines(&src_text);
            let tgt_lines = split_lines(&tgt_text);
            if src_lines.len() != tgt_lines.len() {
                return Err(CorpusError::LineCountMismatch { src_lines: src_lines.len(), tgt_lines: tgt_lines.len() });
            }
            for (i, (s, t)) in src_lines.into_iter().zip(tgt_lines).enumerate() {
                raw.push((i + 1, s.to_string(), t.to_string()));
            }
        }
    }

    let mut skipped = 0;
    let mut pairs = Vec::with_capacity(raw.len());
    for (line, src_text, tgt_text) in raw {
        if src_text.trim().is_empty() || tgt_text.trim().is_empty() {
            log::debug!("skipping {}:{line}: empty side", src_path.display());
            skipped += 1;
            continue;
        }
        pairs.push(ParallelPair {
            id: pairs.len() as u64,
            src_text,
            tgt_text,
            src_lang: direction.src().clone(),
            tgt_lang: direction.tgt().clone(),
            origin: Origin { kind: origin_kind, line },
        });
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} record(s) with an empty side", src_path.display());
    }
    Ok(Loaded { corpus: ParallelCorpus::new(direction, pairs), skipped })
}

/// Writes a corpus in one of the ingestion formats. `paired_plaintext` needs
/// `tgt_path`. Ids are written only for `jsonl_bitext`.
pub fn write_corpus(
    corpus: &ParallelCorpus,
    src_path: &Path,
    tgt_path: Option<&Path>,
    format: CorpusFormat,
) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CorpusError::Io { path: path.clone(), source }
    };
    let create = |path: &Path| fs::File::create(path).map(BufWriter::new).map_err(io(path));
    match format {
        CorpusFormat::TsvBitext => {
            let mut w = create(src_path)?;
            for p in corpus.pairs() {
                writeln!(w, "{}\t{}", p.src_text, p.tgt_text).map_err(io(src_path))?;
            }
            w.flush().map_err(io(src_path))
        }
        CorpusFormat::JsonlBitext => {
            let mut w = create(src_path)?;
            for p in corpus.pairs() {
                let line = serde_json::json!({ "id": p.id, "src": p.src_text, "tgt": p.tgt_text });
                writeln!(w, "{line}").map_err(io(src_path))?;
            }
            w.flush().map_err(io(src_path))
        }
        CorpusFormat::PairedPlaintext => {
            let tgt_path = tgt_path.ok_or(CorpusError::TargetFileRequired)?;
            let mut ws = create(src_path)?;
            let mut wt = create(tgt_path)?;
            for p in corpus.pairs() {
                writeln!(ws, "{}", p.src_text).map_err(io(src_path))?;
                writeln!(wt, "{}", p.tgt_text).map_err(io(tgt_path))?;
            }
            ws.flush().map_err(io(src_path))?;
            wt.flush().map_err(io(tgt_path))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    #[default]
    SeededShuffle,
    Head,
    Tail,
}

impl FromStr for SplitStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "seeded_shuffle" | "shuffle" => Ok(Self::SeededShuffle),
            "head" => Ok(Self::Head),
            "tail" => Ok(Self::Tail),
            other => Err(format!("unknown split strategy {other:?}")),
        }
    }
}

pub const DEFAULT_SPLIT_SEED: u64 = 22;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub test_size: usize,
    #[serde(default = "default_split_seed")]
    pub seed: u64,
    #[serde(default)]
    pub strategy: SplitStrategy,
}

fn default_split_seed() -> u64 {
    DEFAULT_SPLIT_SEED
}

/// Unbiased draw from `0..bound` by rejection sampling.
fn uniform_below(rng: &mut ChaCha8Rng, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

/// Seeded Fisher-Yates permutation of `0..n`.
///
/// The generator is ChaCha8 and the index draw is implemented here rather
/// than delegated to `rand`'s range sampling, so the permutation for a given
/// seed is stable across platforms and `rand` releases.
pub fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = uniform_below(&mut rng, i as u64 + 1) as usize;
        idx.swap(i, j);
    }
    idx
}

/// Splits into `(train, test)`. Both halves keep the original file order.
pub fn split(corpus: &ParallelCorpus, spec: &SplitSpec) -> Result<(ParallelCorpus, ParallelCorpus)> {
    let n = corpus.len();
    if spec.test_size == 0 || spec.test_size >= n {
        return Err(CorpusError::SplitTooLarge { test_size: spec.test_size, corpus_size: n });
    }
    let mut in_test = vec![false; n];
    match spec.strategy {
        SplitStrategy::Head => in_test[..spec.test_size].fill(true),
        SplitStrategy::Tail => in_test[n - spec.test_size..].fill(true),
        SplitStrategy::SeededShuffle => {
            for &i in &seeded_permutation(n, spec.seed)[..spec.test_size] {
                in_test[i] = true;
            }
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (pair, is_test) in corpus.pairs.iter().zip(in_test) {
        if is_test {
            test.push(pair.clone());
        } else {
            train.push(pair.clone());
        }
    }
    let direction = corpus.direction.clone();
    Ok((ParallelCorpus::new(direction.clone(), train), ParallelCorpus::new(direction, test)))
}

/// Keeps the first occurrence of every `(src_text, tgt_text)` pair.
pub fn dedupe(corpus: &ParallelCorpus) -> (ParallelCorpus, usize) {
    let mut seen = HashSet::new();
    let kept: Vec<ParallelPair> =
        corpus.pairs.iter().filter(|p| seen.insert((p.src_text.as_str(), p.tgt_text.as_str()))).cloned().collect();
    let removed = corpus.len() - kept.len();
    (ParallelCorpus::new(corpus.direction.clone(), kept), removed)
}
