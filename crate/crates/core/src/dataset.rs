//! Instruction-tuning dataset emission.
//!
//! A dataset mixes one translation record per bitext pair (P2 instruction,
//! `X → Y`) with a seeded draw of paraphrase records (P3 instruction,
//! `X → X'`). Draws for different sizes are prefixes of one seeded
//! permutation of the pool, so larger subsets always contain smaller ones.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{seeded_permutation, ParallelCorpus};
use crate::digest::{sha256_hex, FieldHasher};
use crate::gateway::DEFAULT_TEMPERATURE;
use crate::lang::{Direction, LangCode};
use crate::prompt::{instruction_line, TemplateId, TEMPLATE_VERSION};
use crate::synthesis::ParaphrasePair;

pub const DEFAULT_LORA_RANK: u32 = 128;
pub const DEFAULT_MIX_SEED: u64 = 22;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("requested {requested} paraphrase pairs but the pool holds {pool}")]
    PoolTooSmall { requested: usize, pool: usize },
    #[error("sweep sizes must be strictly ascending: {0:?}")]
    SizesNotAscending(Vec<usize>),
    #[error("paraphrase pair {pair_id} is {found} but the bitext source language is {expected}")]
    LangMismatch { pair_id: u64, found: LangCode, expected: LangCode },
    #[error("refusing to write an empty dataset")]
    EmptyDataset,
    #[error("io error on {path}: {source}")]
    IoFailure { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Translate,
    Paraphrase,
}

impl Task {
    pub fn template(self) -> TemplateId {
        match self {
            Task::Translate => TemplateId::P2,
            Task::Paraphrase => TemplateId::P3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub task: Task,
    pub direction: Direction,
}

/// The three trainer-facing fields, in the order written to JSONL.
#[derive(Serialize)]
struct TrainerLine<'a> {
    instruction: &'a str,
    input: &'a str,
    output: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixSpec {
    pub n_paraphrase: usize,
    #[serde(default = "default_mix_seed")]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle_final: bool,
}

fn default_mix_seed() -> u64 {
    DEFAULT_MIX_SEED
}

fn default_true() -> bool {
    true
}

impl MixSpec {
    pub fn new(n_paraphrase: usize) -> Self {
        Self { n_paraphrase, seed: DEFAULT_MIX_SEED, shuffle_final: true }
    }
}

/// Configuration handed to the external LoRA trainer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainerStub {
    pub lora_rank: u32,
    pub base_model: String,
    pub dataset_path: String,
    pub notes: String,
}

impl TrainerStub {
    pub fn new(base_model: impl Into<String>, dataset_path: impl Into<String>) -> Self {
        Self {
            lora_rank: DEFAULT_LORA_RANK,
            base_model: base_model.into(),
            dataset_path: dataset_path.into(),
            notes: "LoRA defaults except rank; training runs outside this toolchain".into(),
        }
    }
}

/// Pool indices drawn for a subset of size `n`: the first `n` entries of the
/// seeded permutation, restored to pool order.
fn draw(pool_len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut picked = seeded_permutation(pool_len, seed);
    picked.truncate(n);
    picked.sort_unstable();
    picked
}

pub fn emit(
    bitext_train: &ParallelCorpus,
    para_pool: &[ParaphrasePair],
    mix: &MixSpec,
) -> Result<Vec<InstructionRecord>, DatasetError> {
    if mix.n_paraphrase > para_pool.len() {
        return Err(DatasetError::PoolTooSmall { requested: mix.n_paraphrase, pool: para_pool.len() });
    }
    let direction = bitext_train.direction();
    if let Some(p) = para_pool.iter().find(|p| &p.lang != direction.src()) {
        return Err(DatasetError::LangMismatch {
            pair_id: p.pair_id,
            found: p.lang.clone(),
            expected: direction.src().clone(),
        });
    }
    let src_name = direction.src().display_name();
    let tgt_name = direction.tgt().display_name();
    let translate_instruction = instruction_line(TemplateId::P2, src_name, tgt_name);
    let paraphrase_instruction = instruction_line(TemplateId::P3, src_name, tgt_name);

    let mut records: Vec<InstructionRecord> = bitext_train
        .pairs()
        .iter()
        .map(|p| InstructionRecord {
            instruction: translate_instruction.clone(),
            input: p.src_text.clone(),
            output: p.tgt_text.clone(),
            task: Task::Translate,
            direction: direction.clone(),
        })
        .collect();
    records.extend(draw(para_pool.len(), mix.n_paraphrase, mix.seed).into_iter().map(|i| {
        let p = &para_pool[i];
        InstructionRecord {
            instruction: paraphrase_instruction.clone(),
            input: p.original.clone(),
            output: p.paraphrase.clone(),
            task: Task::Paraphrase,
            direction: direction.clone(),
        }
    }));

    if mix.shuffle_final {
        // Offset so the final order is not correlated with the pool draw.
        let order = seeded_permutation(records.len(), mix.seed ^ 0x9e37_79b9_7f4a_7c15);
        let mut slots: Vec<Option<InstructionRecord>> = records.into_iter().map(Some).collect();
        records = order.into_iter().map(|i| slots[i].take().expect("permutation")).collect();
    }
    Ok(records)
}

/// Nested paraphrase subsets for a data-size sweep.
pub fn sweep_subsets(
    para_pool: &[ParaphrasePair],
    sizes: &[usize],
    seed: u64,
) -> Result<BTreeMap<usize, Vec<ParaphrasePair>>, DatasetError> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DatasetError::SizesNotAscending(sizes.to_vec()));
    }
    if let Some(&max) = sizes.last() {
        if max > para_pool.len() {
            return Err(DatasetError::PoolTooSmall { requested: max, pool: para_pool.len() });
        }
    }
    Ok(sizes
        .iter()
        .map(|&n| (n, draw(para_pool.len(), n, seed).into_iter().map(|i| para_pool[i].clone()).collect()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_path: String,
    pub records: usize,
    pub counts: BTreeMap<Task, usize>,
    pub mix: MixSpec,
    /// Digest of each instruction line in use, keyed `<task>:<direction>`.
    pub prompt_digests: BTreeMap<String, String>,
    pub template_version: u32,
    pub corpus_checksum: String,
    pub pool_digest: String,
    pub temperature: f64,
    pub generator_model: Option<String>,
    pub trainer: TrainerStub,
}

/// Provenance for a dataset manifest beyond what the records carry.
#[derive(Debug, Clone)]
pub struct ManifestInputs {
    pub mix: MixSpec,
    pub corpus_checksum: String,
    pub pool_digest: String,
    pub base_model: String,
    pub temperature: f64,
    pub generator_model: Option<String>,
}

impl ManifestInputs {
    pub fn new(bitext: &ParallelCorpus, pool: &[ParaphrasePair], mix: MixSpec, base_model: impl Into<String>) -> Self {
        Self {
            mix,
            corpus_checksum: bitext.checksum().to_string(),
            pool_digest: pool_digest(pool),
            base_model: base_model.into(),
            temperature: DEFAULT_TEMPERATURE,
            generator_model: pool.first().map(|p| p.model.clone()),
        }
    }
}

pub fn pool_digest(pool: &[ParaphrasePair]) -> String {
    let mut h = FieldHasher::new();
    for p in pool {
        h.field(p.pair_id.to_le_bytes()).field(&p.original).field(&p.paraphrase);
    }
    h.finish()
}

pub fn manifest_path(dataset_path: &Path) -> PathBuf {
    let name = dataset_path.file_stem().unwrap_or_default().to_string_lossy();
    dataset_path.with_file_name(format!("{name}.manifest.json"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::IoFailure { path: path.to_path_buf(), source };
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Writes `path` as JSONL `{instruction, input, output}` plus
/// `<stem>.manifest.json` next to it.
pub fn write_dataset(
    records: &[InstructionRecord],
    path: &Path,
    inputs: &ManifestInputs,
) -> Result<DatasetManifest, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    let mut body = Vec::new();
    let mut counts = BTreeMap::new();
    let mut prompt_digests = BTreeMap::new();
    for r in records {
        serde_json::to_writer(
            &mut body,
            &TrainerLine { instruction: &r.instruction, input: &r.input, output: &r.output },
        )
        .expect("record serializes");
        body.push(b'\n');
        *counts.entry(r.task).or_insert(0) += 1;
        let key = format!("{}:{}", serde_json::to_value(r.task).unwrap().as_str().unwrap(), r.direction);
        prompt_digests.entry(key).or_insert_with(|| sha256_hex(&r.instruction));
    }
    write_atomic(path, &body)?;

    let dataset_path = path.display().to_string();
    let manifest = DatasetManifest {
        records: records.len(),
        counts,
        mix: inputs.mix.clone(),
        prompt_digests,
        template_version: TEMPLATE_VERSION,
        corpus_checksum: inputs.corpus_checksum.clone(),
        pool_digest: inputs.pool_digest.clone(),
        temperature: inputs.temperature,
        generator_model: inputs.generator_model.clone(),
        trainer: TrainerStub::new(&inputs.base_model, &dataset_path),
        dataset_path,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_atomic(&manifest_path(path), &json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn bitext(n: usize) -> ParallelCorpus {
        ParallelCorpus::from_texts("zh-en".parse().unwrap(), (0..n).map(|i| (format!("源{i}"), format!("t{i}"))))
    }

    fn pool(n: usize) -> Vec<ParaphrasePair> {
        (0..n as u64)
            .map(|i| ParaphrasePair {
                pair_id: i,
                lang: LangCode::Zh,
                original: format!("源{i}"),
                paraphrase: format!("改{i}"),
                model: "gen".into(),
                prompt_digest: String::new(),
            })
            .collect()
    }

    #[test]
    fn counts_add_up() {
        let recs = emit(&bitext(5), &pool(4), &MixSpec::new(3)).unwrap();
        assert_eq!(recs.len(), 8);
        assert_eq!(recs.iter().filter(|r| r.task == Task::Paraphrase).count(), 3);
    }

    #[test]
    fn zero_paraphrases_is_plain_fine_tuning() {
        let recs = emit(&bitext(5), &pool(4), &MixSpec { shuffle_final: false, ..MixSpec::new(0) }).unwrap();
        assert!(recs.iter().all(|r| r.task == Task::Translate));
        assert_eq!(
            recs.iter().map(|r| r.input.clone()).collect::<Vec<_>>(),
            bitext(5).pairs().iter().map(|p| p.src_text.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn pool_too_small() {
        assert!(matches!(
            emit(&bitext(3), &pool(10), &MixSpec::new(11)),
            Err(DatasetError::PoolTooSmall { requested: 11, pool: 10 })
        ));
    }

    #[test]
    fn unshuffled_order_puts_translation_first() {
        let recs = emit(&bitext(3), &pool(3), &MixSpec { shuffle_final: false, ..MixSpec::new(2) }).unwrap();
        let tasks: Vec<Task> = recs.iter().map(|r| r.task).collect();
        assert_eq!(tasks, [Task::Translate, Task::Translate, Task::Translate, Task::Paraphrase, Task::Paraphrase]);
    }

    #[test]
    fn instructions_match_templates() {
        let recs = emit(&bitext(4), &pool(4), &MixSpec::new(4)).unwrap();
        let p2 = sha256_hex(instruction_line(TemplateId::P2, "Chinese", "English"));
        let p3 = sha256_hex(instruction_line(TemplateId::P3, "Chinese", "English"));
        for r in &recs {
            let want = match r.task {
                Task::Translate => &p2,
                Task::Paraphrase => &p3,
            };
            assert_eq!(&sha256_hex(&r.instruction), want);
            assert_eq!(r.task.template(), if r.task == Task::Translate { TemplateId::P2 } else { TemplateId::P3 });
        }
        assert!(recs.iter().any(|r| r.instruction.starts_with("Convert the following Chinese sentence")));
    }

    #[test]
    fn sweep_is_nested() {
        let p = pool(100);
        let subsets = sweep_subsets(&p, &[0, 5, 10, 50, 100], 3).unwrap();
        let ids = |n: usize| subsets[&n].iter().map(|x| x.pair_id).collect::<HashSet<_>>();
        for (a, b) in [(0, 5), (5, 10), (10, 50), (50, 100)] {
            assert_eq!(ids(a).len(), a);
            assert!(ids(a).is_subset(&ids(b)));
        }
        assert_eq!(sweep_subsets(&p, &[0], 1).unwrap()[&0].len(), 0);
        assert_eq!(sweep_subsets(&p, &[5, 10], 9).unwrap(), sweep_subsets(&p, &[5, 10], 9).unwrap());
        assert!(matches!(sweep_subsets(&p, &[10, 5], 1), Err(DatasetError::SizesNotAscending(_))));
        assert!(matches!(sweep_subsets(&p, &[101], 1), Err(DatasetError::PoolTooSmall { .. })));
    }

    #[test]
    fn emitted_draw_matches_sweep_subset() {
        let p = pool(20);
        let recs = emit(&bitext(2), &p, &MixSpec { n_paraphrase: 7, seed: 5, shuffle_final: true }).unwrap();
        let emitted: HashSet<String> =
            recs.iter().filter(|r| r.task == Task::Paraphrase).map(|r| r.input.clone()).collect();
        let subset: HashSet<String> =
            sweep_subsets(&p, &[7], 5).unwrap()[&7].iter().map(|x| x.original.clone()).collect();
        assert_eq!(emitted, subset);
    }

    #[test]
    fn writes_jsonl_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let b = bitext(2);
        let p = pool(1);
        let mix = MixSpec::new(1);
        let recs = emit(&b, &p, &mix).unwrap();
        let inputs = ManifestInputs::new(&b, &p, mix, "llama-3-8b");
        let m = write_dataset(&recs, &path, &inputs).unwrap();
        assert_eq!(m.counts[&Task::Translate], 2);
        assert_eq!(m.counts[&Task::Paraphrase], 1);
        assert_eq!(m.trainer.lora_rank, 128);
        assert_eq!(m.temperature, 0.001);

        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        let first = text.lines().next().unwrap();
        let at = |k: &str| first.find(&format!("\"{k}\":")).unwrap();
        assert!(at("instruction") < at("input") && at("input") < at("output"));
        assert!(dir.path().join("train.manifest.json").exists());

        let before = std::fs::read(&path).unwrap();
        let before_manifest = std::fs::read(manifest_path(&path)).unwrap();
        write_dataset(&emit(&b, &p, &MixSpec::new(1)).unwrap(), &path, &inputs).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), before);
        assert_eq!(std::fs::read(manifest_path(&path)).unwrap(), before_manifest);

        assert!(matches!(write_dataset(&[], &path, &inputs), Err(DatasetError::EmptyDataset)));
    }

    #[test]
    fn language_mismatch_rejected() {
        let mut p = pool(2);
        p[1].lang = LangCode::En;
        assert!(matches!(emit(&bitext(2), &p, &MixSpec::new(1)), Err(DatasetError::LangMismatch { pair_id: 1, .. })));
    }
}
