//! Python bindings for the paraalign toolchain.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use paraalign_core::corpus::{self, CorpusFormat};
use paraalign_core::dataset;
use paraalign_core::gateway;
use paraalign_core::metrics::{self, CorpusScore, Metric};
use paraalign_core::prompt;
use paraalign_core::synthesis::ParaphrasePair;
use paraalign_core::{Direction, LangCode, ParallelCorpus, ShotPair, SplitSpec, TemplateId};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse<T: std::str::FromStr>(s: &str) -> PyResult<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(value_err)
}

fn shot_pairs(shots: Option<Vec<(String, String)>>) -> Vec<ShotPair> {
    shots.unwrap_or_default().into_iter().map(|(s, t)| ShotPair::new(s, t)).collect()
}

fn parse_metric(name: &str) -> PyResult<Metric> {
    match name.to_ascii_lowercase().replace('-', "_").as_str() {
        "comet" => Ok(Metric::Comet),
        "rouge_l" | "rougel" => Ok(Metric::RougeL),
        other => Err(value_err(format!("unknown metric {other:?}"))),
    }
}

/// Language-aware tokens used by ROUGE-L.
#[pyfunction]
fn tokenize(text: &str, lang: &str) -> PyResult<Vec<String>> {
    Ok(metrics::tokenize(text, &parse::<LangCode>(lang)?).tokens)
}

#[pyfunction]
fn lcs_length(a: Vec<String>, b: Vec<String>) -> usize {
    metrics::lcs_length(&a, &b)
}

/// `(precision, recall, f1)` of `hyp` against `ref_`.
#[pyfunction]
#[pyo3(signature = (hyp, ref_, lang = "en"))]
fn rouge_l(hyp: &str, ref_: &str, lang: &str) -> PyResult<(f64, f64, f64)> {
    let lang: LangCode = parse(lang)?;
    let s = metrics::rouge_l(&metrics::tokenize(hyp, &lang), &metrics::tokenize(ref_, &lang));
    Ok((s.precision, s.recall, s.f1))
}

#[pyfunction]
#[pyo3(signature = (template, src, tgt, input, shots = None))]
fn render_prompt(
    template: &str,
    src: &str,
    tgt: &str,
    input: &str,
    shots: Option<Vec<(String, String)>>,
) -> PyResult<String> {
    let id: TemplateId = parse(template)?;
    prompt::render(id, src, tgt, &shot_pairs(shots), input).map(|p| p.text).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (template, src, tgt, input, shots = None))]
fn golden_digest(
    template: &str,
    src: &str,
    tgt: &str,
    input: &str,
    shots: Option<Vec<(String, String)>>,
) -> PyResult<String> {
    let id: TemplateId = parse(template)?;
    prompt::golden_digest(id, src, tgt, &shot_pairs(shots), input).map_err(value_err)
}

#[pyfunction]
fn extract_answer(content: &str, template: &str, tgt_name: &str) -> PyResult<String> {
    gateway::extract_answer(content, parse(template)?, tgt_name).map_err(value_err)
}

/// Signed two-decimal delta `a - b`, e.g. `"+2.71"`.
#[pyfunction]
#[pyo3(signature = (metric, a, b, n = 0))]
fn score_delta(metric: &str, a: f64, b: f64, n: usize) -> PyResult<(f64, String)> {
    let metric = parse_metric(metric)?;
    let d = metrics::delta(&CorpusScore::stored(metric, "a", a, n), &CorpusScore::stored(metric, "b", b, n))
        .map_err(value_err)?;
    Ok((d.delta, d.signed()))
}

#[pyfunction]
fn seeded_permutation(n: usize, seed: u64) -> Vec<usize> {
    corpus::seeded_permutation(n, seed)
}

/// Nested subsets of a paraphrase pool, as lists of pair ids per size.
#[pyfunction]
#[pyo3(signature = (pool, sizes, seed = 22))]
fn sweep_subsets(
    pool: Vec<(u64, String, String)>,
    sizes: Vec<usize>,
    seed: u64,
) -> PyResult<BTreeMap<usize, Vec<u64>>> {
    let pool: Vec<ParaphrasePair> = pool
        .into_iter()
        .map(|(pair_id, original, paraphrase)| ParaphrasePair {
            pair_id,
            lang: LangCode::Other("und".into()),
            original,
            paraphrase,
            model: String::new(),
            prompt_digest: String::new(),
        })
        .collect();
    let subsets = dataset::sweep_subsets(&pool, &sizes, seed).map_err(value_err)?;
    Ok(subsets.into_iter().map(|(n, s)| (n, s.into_iter().map(|p| p.pair_id).collect())).collect())
}

/// A loaded parallel corpus.
#[pyclass(name = "Corpus", module = "paraalign", frozen)]
struct PyCorpus {
    inner: ParallelCorpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    #[pyo3(signature = (direction, pairs))]
    fn from_pairs(direction: &str, pairs: Vec<(String, String)>) -> PyResult<Self> {
        Ok(Self { inner: ParallelCorpus::from_texts(parse::<Direction>(direction)?, pairs) })
    }

    #[staticmethod]
    #[pyo3(signature = (path, direction, format = "tsv_bitext", tgt_path = None))]
    fn load(path: PathBuf, direction: &str, format: &str, tgt_path: Option<PathBuf>) -> PyResult<Self> {
        let format: CorpusFormat = parse(format)?;
        let loaded = corpus::load_parallel(&path, tgt_path.as_deref(), format, parse(direction)?).map_err(value_err)?;
        Ok(Self { inner: loaded.corpus })
    }

    /// `(train, test)` halves.
    #[pyo3(signature = (test_size, seed = 22, strategy = "seeded_shuffle"))]
    fn split(&self, test_size: usize, seed: u64, strategy: &str) -> PyResult<(Self, Self)> {
        let spec = SplitSpec { test_size, seed, strategy: parse(strategy)? };
        let (train, test) = corpus::split(&self.inner, &spec).map_err(value_err)?;
        Ok((Self { inner: train }, Self { inner: test }))
    }

    /// `(deduplicated, removed_count)`.
    fn dedupe(&self) -> (Self, usize) {
        let (inner, removed) = corpus::dedupe(&self.inner);
        (Self { inner }, removed)
    }

    /// `(id, src, tgt)` tuples in file order.
    fn pairs(&self) -> Vec<(u64, String, String)> {
        self.inner.pairs().iter().map(|p| (p.id, p.src_text.clone(), p.tgt_text.clone())).collect()
    }

    #[getter]
    fn direction(&self) -> String {
        self.inner.direction().to_string()
    }

    #[getter]
    fn checksum(&self) -> String {
        self.inner.checksum().to_string()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Corpus({}, {} pairs)", self.inner.direction(), self.inner.len())
    }
}

#[pymodule]
fn paraalign(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(lcs_length, m)?)?;
    m.add_function(wrap_pyfunction!(rouge_l, m)?)?;
    m.add_function(wrap_pyfunction!(render_prompt, m)?)?;
    m.add_function(wrap_pyfunction!(golden_digest, m)?)?;
    m.add_function(wrap_pyfunction!(extract_answer, m)?)?;
    m.add_function(wrap_pyfunction!(score_delta, m)?)?;
    m.add_function(wrap_pyfunction!(seeded_permutation, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_subsets, m)?)?;
    m.add("DEFAULT_SPLIT_SEED", corpus::DEFAULT_SPLIT_SEED)?;
    m.add("ROUGE_CONVENTION", metrics::ROUGE_CONVENTION)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_names() {
        assert_eq!(parse_metric("ROUGE-L").unwrap(), Metric::RougeL);
        assert_eq!(parse_metric("comet").unwrap(), Metric::Comet);
    }

    #[test]
    fn shots_convert_in_order() {
        let s = shot_pairs(Some(vec![("a".into(), "b".into())]));
        assert_eq!(s, [ShotPair::new("a", "b")]);
        assert!(shot_pairs(None).is_empty());
    }
}
