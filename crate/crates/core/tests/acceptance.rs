//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use paraalign_core::corpus::{load_parallel, split, CorpusFormat, SplitSpec, SplitStrategy};
use paraalign_core::dataset::{emit, manifest_path, sweep_subsets, write_dataset, ManifestInputs, MixSpec};
use paraalign_core::experiment::{run_matrix, EvalReport, ExperimentConfig};
use paraalign_core::gateway::{Backend, Gateway, GatewayConfig, ScriptMode, ScriptedBackend};
use paraalign_core::metrics::{lcs_length, rouge_l, tokenize, Metric};
use paraalign_core::prompt::{render, ShotPair, TemplateId};
use paraalign_core::synthesis::ParaphrasePair;
use paraalign_core::translate::Mode;
use paraalign_core::{Direction, LangCode, ParallelCorpus};

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// Runs the built binary with output captured; returns its exit code.
fn paraalign(args: &[&std::ffi::OsStr]) -> i32 {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_paraalign"))
        .args(args)
        .env_remove("PARAALIGN_SCORER_URL")
        .output()
        .expect("spawn paraalign");
    out.status.code().unwrap_or(-1)
}

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !($cond) {
            return Err(format!($($fmt)+));
        }
    };
}

/// Longest common subsequence by trying every subsequence of `a`.
fn brute_force_lcs(a: &[u8], b: &[u8]) -> usize {
    let is_subseq = |sub: &[u8]| {
        let mut it = b.iter();
        sub.iter().all(|x| it.any(|y| y == x))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let sub: Vec<u8> = (0..a.len()).filter(|i| mask & (1 << i) != 0).map(|i| a[i]).collect();
            is_subseq(&sub).then_some(sub.len())
        })
        .max()
        .unwrap_or(0)
}

fn lcs_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cases = 2000;
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..cases {
        let a: Vec<u8> = (0..rng.random_range(0..=10)).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<u8> = (0..rng.random_range(0..=10)).map(|_| rng.random_range(0..4)).collect();
        if lcs_length(&a, &b) != brute_force_lcs(&a, &b) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(mismatches == 0, "{mismatches} mismatches in {cases} cases");
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:?}");
    Ok(format!("{cases} cases, 0 mismatches, {:.2}s", elapsed.as_secs_f64()))
}

fn metric_spot_values() -> Outcome {
    let en = LangCode::En;
    let hyp = tokenize("the cat sat", &en);
    let reference = tokenize("the cat sat on the mat", &en);
    let lcs = brute_force_lcs(&[0, 1, 2], &[0, 1, 2, 3, 0, 4]);
    let (p, r) = (lcs as f64 / 3.0, lcs as f64 / 6.0);
    let f1 = 2.0 * p * r / (p + r);
    let s = rouge_l(&hyp, &reference);
    ensure!((s.precision - p).abs() < 1e-4, "precision {} vs {p}", s.precision);
    ensure!((s.recall - r).abs() < 1e-4, "recall {} vs {r}", s.recall);
    ensure!((s.f1 - f1).abs() < 1e-4 && (s.f1 - 0.6667).abs() < 1e-4, "f1 {} vs {f1}", s.f1);
    let same = rouge_l(&hyp, &hyp);
    ensure!(same.precision == 1.0 && same.recall == 1.0 && same.f1 == 1.0, "identity gave {same:?}");
    let disjoint = rouge_l(&hyp, &tokenize("dogs bark loudly", &en));
    ensure!(disjoint.precision == 0.0 && disjoint.recall == 0.0 && disjoint.f1 == 0.0, "disjoint gave {disjoint:?}");
    Ok(format!("P={:.4} R={:.4} F1={:.4}; identity 1, disjoint 0", s.precision, s.recall, s.f1))
}

fn hundredths(v: &Value) -> i64 {
    (v.as_f64().expect("number") * 100.0).round() as i64
}

fn signed_hundredths(d: i64) -> String {
    let sign = if d > 0 {
        "+"
    } else if d < 0 {
        "-"
    } else {
        ""
    };
    format!("{sign}{}.{:02}", d.abs() / 100, d.abs() % 100)
}

/// Expected deltas computed from the fixture in integer hundredths.
fn expected_deltas(cfg: &Value) -> Vec<(String, String, &'static str, String)> {
    let baseline = cfg["baseline"].as_str().unwrap();
    let systems = cfg["systems"].as_array().unwrap();
    let base = systems.iter().find(|s| s["label"] == baseline).unwrap();
    let mut out = Vec::new();
    for s in systems.iter().filter(|s| s["label"] != baseline) {
        for (dir, scores) in s["scores"].as_object().unwrap() {
            for (key, name) in [("comet", "COMET"), ("rouge_l", "ROUGE-L")] {
                let d = hundredths(&scores[key]) - hundredths(&base["scores"][dir][key]);
                out.push((dir.clone(), s["label"].as_str().unwrap().to_string(), name, signed_hundredths(d)));
            }
        }
    }
    out
}

fn delta_reproduction() -> Outcome {
    let mut checked = 0;
    let mut negatives = 0;
    for table in ["resource_rich", "low_resource", "variants"] {
        let path = fixtures().join("stored").join(format!("{table}.json"));
        let raw: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        let mut cfg = ExperimentConfig::load(&path).map_err(|e| e.to_string())?;
        let out = tempfile::tempdir().unwrap();
        cfg.output_dir = out.path().to_path_buf();
        let report = run_matrix(&cfg).map_err(|e| e.to_string())?;
        let md = paraalign_core::experiment::to_markdown(&report);
        for (dir, system, metric, want) in expected_deltas(&raw) {
            let direction: Direction = dir.parse().unwrap();
            let metric = if metric == "COMET" { Metric::Comet } else { Metric::RougeL };
            let got =
                report.delta(&direction, &system, metric).ok_or(format!("{table}: no delta for {dir} {system}"))?;
            ensure!(got.signed() == want, "{table} {dir} {system} {metric}: {} != {want}", got.signed());
            let line = format!("| {} | {system} | {metric} | {want} |", direction.label());
            ensure!(md.contains(&line), "{table}: markdown lacks {line:?}");
            negatives += want.starts_with('-') as usize;
            checked += 1;
        }
    }
    let t3 = ExperimentConfig::load(&fixtures().join("stored/low_resource.json")).map_err(|e| e.to_string())?;
    let report = run_matrix(&t3).map_err(|e| e.to_string())?;
    let pt = "ParaAlign Translator";
    let heb: Direction = "heb-en".parse().unwrap();
    let swh: Direction = "en-swh".parse().unwrap();
    let comet = report.delta(&heb, pt, Metric::Comet).unwrap().signed();
    let rouge = report.delta(&heb, pt, Metric::RougeL).unwrap().signed();
    let swh_comet = report.delta(&swh, pt, Metric::Comet).unwrap().signed();
    ensure!(comet == "+2.71" && rouge == "+7.11", "Heb->En gave {comet} / {rouge}");
    ensure!(swh_comet == "-6.04", "En->Swh COMET gave {swh_comet}");
    Ok(format!("Heb⇒En {comet} COMET, {rouge} ROUGE-L; En⇒Swh {swh_comet} COMET; {checked} deltas ({negatives} negative) signed correctly"))
}

fn stored_sweep_reproduction() -> Outcome {
    let cfg_path = fixtures().join("stored/sweep.json");
    let out = tempfile::tempdir().unwrap();
    let code = paraalign(&[
        "sweep".as_ref(),
        "--config".as_ref(),
        cfg_path.as_os_str(),
        "--output-dir".as_ref(),
        out.path().as_os_str(),
    ]);
    ensure!(code == 0, "sweep exited {code}");
    let expected = [
        (0, "47.2892", "79.1109"),
        (500, "44.7229", "75.7251"),
        (1000, "51.2182", "80.0284"),
        (2500, "51.0748", "79.8441"),
        (5000, "51.1289", "80.1084"),
        (10000, "51.5051", "80.0022"),
    ];
    let csv = std::fs::read_to_string(out.path().join("sweep.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    ensure!(rows.len() == expected.len(), "{} rows", rows.len());
    let mut by_size = BTreeMap::new();
    for (row, (size, rouge, comet)) in rows.iter().zip(expected) {
        ensure!(
            row[0] == size.to_string() && row[2] == rouge && row[3] == comet,
            "row {row:?} != ({size}, {rouge}, {comet})"
        );
        by_size.insert(size, (rouge.parse::<f64>().unwrap(), comet.parse::<f64>().unwrap()));
    }
    let (s0, s500, s1000) = (by_size[&0], by_size[&500], by_size[&1000]);
    ensure!(s500.0 < s0.0 && s0.0 < s1000.0, "ROUGE-L ordering broken");
    ensure!(s500.1 < s0.1 && s0.1 < s1000.1, "COMET ordering broken");
    Ok("6 rows match to 4 decimals; score(500) < score(0) < score(1000) on both metrics".into())
}

fn prompt_goldens() -> Outcome {
    let dir = fixtures().join("prompts");
    let case: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("zh_en.case.json")).unwrap()).unwrap();
    let (src, tgt, input) =
        (case["src"].as_str().unwrap(), case["tgt"].as_str().unwrap(), case["input"].as_str().unwrap());
    let shots: Vec<ShotPair> = serde_json::from_value(case["shots"].clone()).unwrap();
    for (id, file, shots) in [
        (TemplateId::P1, "zh_en_p1.txt", shots.as_slice()),
        (TemplateId::P2, "zh_en_p2.txt", &[][..]),
        (TemplateId::P3, "zh_en_p3.txt", &[][..]),
    ] {
        let golden = std::fs::read(dir.join(file)).unwrap();
        let rendered = render(id, src, tgt, shots, input).map_err(|e| e.to_string())?;
        ensure!(rendered.text.as_bytes() == golden.as_slice(), "{id} differs from {file}");
    }
    let p1 = std::fs::read_to_string(dir.join("zh_en_p1.txt")).unwrap();
    let p2 = std::fs::read_to_string(dir.join("zh_en_p2.txt")).unwrap();
    let p3 = std::fs::read_to_string(dir.join("zh_en_p3.txt")).unwrap();
    for (text, needle) in [
        (&p1, "Please translate the following sentence from Chinese to English."),
        (&p1, "Here is some examples:"),
        (&p1, "###Chinese: "),
        (&p1, "###English: "),
        (&p2, "Please translate the following sentence from Chinese to English."),
        (
            &p3,
            "Convert the following Chinese sentence into another Chinese sentence that maintains the same meaning \
             but is more likely to translate into natural, native-sounding English.",
        ),
    ] {
        ensure!(text.contains(needle), "missing {needle:?}");
    }
    Ok("P1/P2/P3 byte-identical to goldens; instruction substrings present".into())
}

fn end_to_end_mock() -> Outcome {
    let cfg = fixtures().join("e2e/experiment.json");
    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let code = paraalign(&[
        "run-matrix".as_ref(),
        "--config".as_ref(),
        cfg.as_os_str(),
        "--output-dir".as_ref(),
        out.path().as_os_str(),
    ]);
    let elapsed = start.elapsed();
    ensure!(code == 0, "run-matrix exited {code}");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    let report: EvalReport = serde_json::from_str(&std::fs::read_to_string(out.path().join("report.json")).unwrap())
        .map_err(|e| e.to_string())?;
    ensure!(report.rows.len() == 4, "{} rows", report.rows.len());
    ensure!(report.score_count() == 8, "{} scores", report.score_count());
    ensure!(report.deltas.len() == 4, "{} deltas", report.deltas.len());
    for row in &report.rows {
        ensure!(row.failures.is_empty(), "{} {}: {:?}", row.direction, row.system, row.failures);
        let stats = row.stats.as_ref().ok_or("live row without stats")?;
        let mode = row.mode.ok_or("live row without mode")?;
        let law = (stats.sentences * mode.calls_per_sentence()) as u64 - stats.cache_hits;
        ensure!(
            stats.backend_calls == law,
            "{} {}: {} calls, law says {law}",
            row.direction,
            row.system,
            stats.backend_calls
        );
        let expect_intermediates = if mode == Mode::Staged { stats.sentences } else { 0 };
        ensure!(
            stats.intermediates == expect_intermediates,
            "{} {}: {} intermediates",
            row.direction,
            row.system,
            stats.intermediates
        );
    }
    for name in ["report.md", "report.csv", "cases.md", "run-matrix.manifest.json"] {
        ensure!(out.path().join(name).exists(), "{name} not written");
    }
    let cases = std::fs::read_to_string(out.path().join("cases.md")).unwrap();
    ensure!(cases.contains("| SRC | 以免再次发生这样的事情 |"), "case study lacks the SRC row");
    ensure!(cases.contains("So that it doesn't happen again."), "case study lacks the PT hypothesis");
    Ok(format!(
        "4 rows, 8 scores, 4 deltas in {:.2}s; call counts follow the mode law; staged intermediates recorded",
        elapsed.as_secs_f64()
    ))
}

fn dataset_invariants() -> Outcome {
    let direction: Direction = "zh-en".parse().unwrap();
    let bitext =
        ParallelCorpus::from_texts(direction, (0..100).map(|i| (format!("第{i}句。"), format!("Sentence {i}."))));
    let pool: Vec<ParaphrasePair> = (0..40)
        .map(|i| ParaphrasePair {
            pair_id: i,
            lang: LangCode::Zh,
            original: format!("第{i}句。"),
            paraphrase: format!("这是第{i}句。"),
            model: "gen".into(),
            prompt_digest: format!("{i:064x}"),
        })
        .collect();
    for (n, want) in [(0, 100), (10, 110), (25, 125)] {
        let got = emit(&bitext, &pool, &MixSpec::new(n)).map_err(|e| e.to_string())?.len();
        ensure!(got == want, "n_paraphrase {n}: {got} records");
    }
    let subsets = sweep_subsets(&pool, &[0, 10, 25, 40], 22).map_err(|e| e.to_string())?;
    let ids = |n: usize| subsets[&n].iter().map(|p| p.pair_id).collect::<BTreeSet<_>>();
    for w in [0, 10, 25, 40].windows(2) {
        ensure!(ids(w[0]).is_subset(&ids(w[1])), "subset {} not inside {}", w[0], w[1]);
        ensure!(ids(w[1]).len() == w[1], "subset {} has {}", w[1], ids(w[1]).len());
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.jsonl");
    let mix = MixSpec::new(25);
    let inputs = ManifestInputs::new(&bitext, &pool, mix.clone(), "llama-3-8b");
    write_dataset(&emit(&bitext, &pool, &mix).unwrap(), &path, &inputs).map_err(|e| e.to_string())?;
    let (first, first_manifest) = (std::fs::read(&path).unwrap(), std::fs::read(manifest_path(&path)).unwrap());
    write_dataset(&emit(&bitext, &pool, &mix).unwrap(), &path, &inputs).map_err(|e| e.to_string())?;
    ensure!(std::fs::read(&path).unwrap() == first, "dataset bytes changed on re-emission");
    ensure!(std::fs::read(manifest_path(&path)).unwrap() == first_manifest, "manifest bytes changed on re-emission");
    let manifest: Value = serde_json::from_slice(&first_manifest).unwrap();
    ensure!(manifest["trainer"]["lora_rank"] == 128, "lora_rank {}", manifest["trainer"]["lora_rank"]);
    ensure!(manifest["temperature"] == 0.001, "temperature {}", manifest["temperature"]);
    Ok("100/110/125 records; nested sweeps; byte-identical re-emission; lora_rank 128, temperature 0.001".into())
}

fn split_invariants() -> Outcome {
    let path = fixtures().join("split/flores_zh_en_2007.tsv");
    let direction: Direction = "zh-en".parse().unwrap();
    let corpus = load_parallel(&path, None, CorpusFormat::TsvBitext, direction).map_err(|e| e.to_string())?.corpus;
    ensure!(corpus.len() == 2007, "fixture has {} pairs", corpus.len());
    let spec = SplitSpec { test_size: 505, seed: 22, strategy: SplitStrategy::SeededShuffle };
    let (train, test) = split(&corpus, &spec).map_err(|e| e.to_string())?;
    ensure!(test.len() == 505 && train.len() == 1502, "{}/{}", test.len(), train.len());
    let train_ids: BTreeSet<u64> = train.pairs().iter().map(|p| p.id).collect();
    let test_ids: BTreeSet<u64> = test.pairs().iter().map(|p| p.id).collect();
    ensure!(train_ids.is_disjoint(&test_ids), "train and test overlap");
    ensure!(train_ids.len() + test_ids.len() == 2007, "ids lost");
    let (train2, test2) = split(&corpus, &spec).map_err(|e| e.to_string())?;
    ensure!(train2 == train && test2 == test, "second split differs");
    Ok("505 test / 1,502 train, disjoint, identical across runs".into())
}

fn cache_soundness() -> Outcome {
    let backend = Arc::new(ScriptedBackend::new(ScriptMode::Echo).with_latency(Duration::from_millis(20)));
    let cfg = GatewayConfig { concurrency_limit: 8, ..GatewayConfig::default() };
    let gw = Gateway::new(cfg, backend.clone() as Arc<dyn Backend>).map_err(|e| e.to_string())?;
    let prompt = render(TemplateId::P2, "Chinese", "English", &[], "他是一般人").unwrap();
    let req = gw.request(prompt, "cache-soundness");
    let cached: Vec<bool> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..50).map(|_| s.spawn(|| gw.complete(&req).map(|c| c.cached))).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect::<Result<_, _>>()
    })
    .map_err(|e| e.to_string())?;
    ensure!(backend.total_calls() == 1, "{} backend calls", backend.total_calls());
    let hits = cached.iter().filter(|&&c| c).count();
    ensure!(hits == 49, "{hits} cached completions");
    Ok("50 concurrent identical requests, 1 backend call".into())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("ROUGE-L oracle equivalence", lcs_oracle),
        ("metric spot values", metric_spot_values),
        ("delta reproduction", delta_reproduction),
        ("stored sweep reproduction", stored_sweep_reproduction),
        ("prompt golden files", prompt_goldens),
        ("end-to-end mock run", end_to_end_mock),
        ("dataset invariants", dataset_invariants),
        ("split invariants", split_invariants),
        ("cache soundness", cache_soundness),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS  [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL  [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
