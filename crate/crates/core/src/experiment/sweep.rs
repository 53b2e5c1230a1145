use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::ParallelCorpus;
use crate::dataset::{self, emit, sweep_subsets, write_dataset, DatasetError, ManifestInputs, MixSpec};
use crate::digest::sha256_hex;
use crate::synthesis::ParaphrasePair;

use super::ExperimentError;

pub const DEFAULT_SWEEP_SIZES: [usize; 6] = [0, 500, 1000, 2500, 5000, 10000];

/// Scores measured for the model fine-tuned on one sweep size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepScore {
    #[serde(default)]
    pub rouge_l: Option<f64>,
    #[serde(default)]
    pub comet: Option<f64>,
}

pub struct SweepInputs<'a> {
    /// Training bitext; when absent no datasets are written and only the
    /// score table is produced.
    pub bitext: Option<&'a ParallelCorpus>,
    pub pool: &'a [ParaphrasePair],
    pub sizes: &'a [usize],
    pub seed: u64,
    pub base_model: String,
    pub scores: BTreeMap<usize, SweepScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size: usize,
    pub records: Option<usize>,
    pub dataset_path: Option<PathBuf>,
    pub manifest_digest: Option<String>,
    pub rouge_l: Option<f64>,
    pub comet: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn row(&self, size: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.size == size)
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["size", "records", "rouge_l", "comet", "manifest_digest"]).expect("in-memory write");
        let num = |v: Option<f64>| v.map(|v| format!("{v:.4}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.size.to_string(),
                r.records.map(|n| n.to_string()).unwrap_or_default(),
                num(r.rouge_l),
                num(r.comet),
                r.manifest_digest.clone().unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Writes one dataset per sweep size under `<out_dir>/sweep/` (when a
/// bitext is given) and `<out_dir>/sweep.csv`.
pub fn run_sweep(inputs: &SweepInputs<'_>, out_dir: &Path) -> Result<SweepTable, ExperimentError> {
    if inputs.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(DatasetError::SizesNotAscending(inputs.sizes.to_vec()).into());
    }
    let mut rows = Vec::with_capacity(inputs.sizes.len());
    let subsets = match inputs.bitext {
        Some(_) => Some(sweep_subsets(inputs.pool, inputs.sizes, inputs.seed)?),
        None => None,
    };
    for &size in inputs.sizes {
        let score = inputs.scores.get(&size);
        let mut row = SweepRow {
            size,
            records: None,
            dataset_path: None,
            manifest_digest: None,
            rouge_l: score.and_then(|s| s.rouge_l),
            comet: score.and_then(|s| s.comet),
        };
        if let (Some(bitext), Some(subsets)) = (inputs.bitext, &subsets) {
            // Each dataset is emitted from its own nested subset so the
            // manifests can be compared by pool digest.
            let subset = &subsets[&size];
            let mix = MixSpec { n_paraphrase: size, seed: inputs.seed, shuffle_final: true };
            let records = emit(bitext, subset, &mix)?;
            let path = out_dir.join("sweep").join(format!("n{size}.jsonl"));
            let manifest =
                write_dataset(&records, &path, &ManifestInputs::new(bitext, subset, mix, &inputs.base_model))?;
            let bytes = std::fs::read(dataset::manifest_path(&path))
                .map_err(|source| ExperimentError::Io { path: dataset::manifest_path(&path), source })?;
            row.records = Some(manifest.records);
            row.dataset_path = Some(path);
            row.manifest_digest = Some(sha256_hex(&bytes));
        }
        rows.push(row);
    }
    let table = SweepTable { seed: inputs.seed, rows };
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io { path: out_dir.to_path_buf(), source })?;
    let csv_path = out_dir.join("sweep.csv");
    std::fs::write(&csv_path, table.to_csv()).map_err(|source| ExperimentError::Io { path: csv_path, source })?;
    Ok(table)
}
