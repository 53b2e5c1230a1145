use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusFormat, SplitSpec};
use crate::gateway::{GatewayConfig, ScriptSpec};
use crate::lang::Direction;
use crate::metrics::comet::{MockScorer, DEFAULT_BATCH_CAP};
use crate::prompt::ShotPair;
use crate::translate::Mode;

use super::ExperimentError;

pub const SCORER_URL_ENV: &str = "PARAALIGN_SCORER_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub directions: Vec<DirectionSpec>,
    pub systems: Vec<SystemSpec>,
    /// Label of the system deltas are computed against; defaults to the
    /// first system.
    #[serde(default)]
    pub baseline: Option<String>,
    #[serde(default)]
    pub sweep_sizes: Vec<usize>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub scorer: ScorerSpec,
    /// Case-study sentences dumped per direction and compared system.
    #[serde(default = "default_case_limit")]
    pub case_limit: usize,
    /// Persistent completion cache; in-memory when absent.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_case_limit() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSpec {
    pub direction: Direction,
    /// Test corpus; only needed when some system translates live.
    #[serde(default)]
    pub test_path: Option<PathBuf>,
    #[serde(default)]
    pub tgt_path: Option<PathBuf>,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    /// When set, the loaded file is split and its test half used.
    #[serde(default)]
    pub split: Option<SplitSpec>,
    /// Few-shot examples for `fewshot` systems, in this direction.
    #[serde(default)]
    pub shots: Vec<ShotPair>,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::TsvBitext
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub label: String,
    /// Free-form scheme column ("Few-Shot", "Fine-Tuning", "PT").
    #[serde(default)]
    pub scheme: Option<String>,
    #[serde(flatten)]
    pub source: SystemSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SystemSource {
    /// Translates the test sets through a gateway.
    Live {
        mode: Mode,
        #[serde(default)]
        gateway: GatewayConfig,
        #[serde(default)]
        backend: BackendSpec,
    },
    /// Published or externally computed corpus scores.
    Stored { scores: BTreeMap<Direction, StoredScore> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoredScore {
    #[serde(default)]
    pub comet: Option<f64>,
    #[serde(default)]
    pub rouge_l: Option<f64>,
    #[serde(default)]
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BackendSpec {
    #[default]
    Http,
    Scripted {
        #[serde(default)]
        script: Option<ScriptSpec>,
        #[serde(default)]
        script_path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScorerSpec {
    /// Use `$PARAALIGN_SCORER_URL` if set, otherwise skip COMET.
    #[default]
    Auto,
    Http {
        url: String,
        #[serde(default = "default_batch_cap")]
        batch_cap: usize,
    },
    Mock {
        scorer: MockScorer,
    },
    Disabled,
}

fn default_batch_cap() -> usize {
    DEFAULT_BATCH_CAP
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl ExperimentConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        if let Some(c) = &mut self.cache_dir {
            resolve(base, c);
        }
        for d in &mut self.directions {
            if let Some(p) = &mut d.test_path {
                resolve(base, p);
            }
            if let Some(p) = &mut d.tgt_path {
                resolve(base, p);
            }
        }
        for s in &mut self.systems {
            if let SystemSource::Live { backend: BackendSpec::Scripted { script_path: Some(p), .. }, .. } =
                &mut s.source
            {
                resolve(base, p);
            }
        }
    }

    pub fn baseline_label(&self) -> Option<&str> {
        self.baseline.as_deref().or_else(|| self.systems.first().map(|s| s.label.as_str()))
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.systems.is_empty() {
            return Err(ExperimentError::NoSystems);
        }
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.systems {
            if !seen.insert(s.label.as_str()) {
                return Err(ExperimentError::DuplicateLabel(s.label.clone()));
            }
            if let SystemSource::Live { gateway, .. } = &s.source {
                gateway.validate().map_err(|e| ExperimentError::Config(format!("{}: {e}", s.label)))?;
            }
        }
        if let Some(b) = &self.baseline {
            if !seen.contains(b.as_str()) {
                return Err(ExperimentError::UnknownBaseline(b.clone()));
            }
        }
        let any_live = self.systems.iter().any(|s| matches!(s.source, SystemSource::Live { .. }));
        if any_live {
            if let Some(d) = self.directions.iter().find(|d| d.test_path.is_none()) {
                return Err(ExperimentError::Config(format!("direction {} has no test_path", d.direction)));
            }
        }
        Ok(())
    }
}
