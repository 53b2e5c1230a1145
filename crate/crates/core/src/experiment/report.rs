use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::Metric;

use super::{EvalReport, ExperimentError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json];
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?}")),
        }
    }
}

const METRICS: [Metric; 2] = [Metric::Comet, Metric::RougeL];

fn cell(text: &str) -> String {
    text.replace('|', "\\|").replace('\n', " ")
}

fn value(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "n/a".to_string())
}

/// Direction-major table with COMET and ROUGE-L sub-columns, followed by the
/// deltas against the baseline and the scoring conventions.
pub fn to_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    let mut header = String::from("| System | Scheme |");
    let mut rule = String::from("|---|---|");
    for d in &report.directions {
        for m in METRICS {
            let _ = write!(header, " {} {m} |", d.label());
            rule.push_str("---:|");
        }
    }
    let _ = writeln!(out, "{header}\n{rule}");
    for system in &report.systems {
        let scheme = report
            .rows
            .iter()
            .find(|r| &r.system == system)
            .and_then(|r| r.scheme.clone().or_else(|| r.mode.map(|m| m.to_string())))
            .unwrap_or_default();
        let _ = write!(out, "| {} | {} |", cell(system), cell(&scheme));
        for d in &report.directions {
            let row = report.row(d, system);
            for m in METRICS {
                let _ = write!(out, " {} |", value(row.and_then(|r| r.score(m)).map(|s| s.value)));
            }
        }
        out.push('\n');
    }

    if !report.deltas.is_empty() {
        let _ = writeln!(out, "\n## Deltas vs {}\n", cell(&report.baseline));
        out.push_str("| Direction | System | Metric | Delta |\n|---|---|---|---:|\n");
        for d in &report.deltas {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                d.direction.label(),
                cell(&d.delta.system_a),
                d.delta.metric,
                d.delta.signed()
            );
        }
    }

    let holes: Vec<_> = report.rows.iter().filter(|r| !r.failures.is_empty()).collect();
    if !holes.is_empty() {
        out.push_str("\n## Failures\n\n");
        for r in holes {
            for f in &r.failures {
                let _ = writeln!(out, "- {} / {}: {}", r.direction.label(), r.system, f);
            }
        }
    }

    out.push_str("\n## Conventions\n\n");
    for (k, v) in &report.metadata.conventions {
        let _ = writeln!(out, "- {k}: {v}");
    }
    let _ = writeln!(out, "- template_version: {}", report.metadata.template_version);
    out
}

/// One line per (direction, system, metric); holes have an empty value.
pub fn to_csv(report: &EvalReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["direction", "system", "scheme", "mode", "metric", "value", "n", "delta_vs_baseline"])
        .expect("in-memory write");
    for r in &report.rows {
        for m in METRICS {
            let score = r.score(m);
            let delta = report.delta(&r.direction, &r.system, m).map(|d| d.signed()).unwrap_or_default();
            w.write_record([
                r.direction.to_string(),
                r.system.clone(),
                r.scheme.clone().unwrap_or_default(),
                r.mode.map(|m| m.to_string()).unwrap_or_default(),
                m.to_string(),
                score.map(|s| format!("{:.4}", s.value)).unwrap_or_default(),
                score.map(|s| s.n.to_string()).unwrap_or_default(),
                delta,
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn to_json(report: &EvalReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn to_cases_markdown(report: &EvalReport) -> String {
    let mut out = String::new();
    for c in &report.cases {
        let _ = writeln!(out, "### Case study of {}, pair {}\n", c.direction.label(), c.pair_id);
        out.push_str("| | |\n|---|---|\n");
        let _ = writeln!(out, "| SRC | {} |", cell(&c.src));
        let _ = writeln!(out, "| TGT | {} |", cell(&c.tgt));
        let _ = writeln!(out, "| {} | {} |", cell(&c.baseline_system), cell(&c.baseline_hypothesis));
        let _ = writeln!(out, "| {} | {} |", cell(&c.system), cell(&c.hypothesis));
        if let Some(i) = &c.intermediate {
            let _ = writeln!(out, "| Intermediate paraphrase | {} |", cell(i));
        }
        out.push('\n');
    }
    out
}

/// Writes the requested formats under `out_dir`. Markdown also writes
/// `cases.md`.
pub fn render_report(
    report: &EvalReport,
    formats: &[ReportFormat],
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ExperimentError> {
    if report.rows.is_empty() {
        return Err(ExperimentError::EmptyReport);
    }
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io { path: out_dir.to_path_buf(), source })?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), ExperimentError> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|source| ExperimentError::Io { path: path.clone(), source })?;
        written.push(path);
        Ok(())
    };
    for f in formats {
        match f {
            ReportFormat::Markdown => {
                put("report.md", to_markdown(report))?;
                put("cases.md", to_cases_markdown(report))?;
            }
            ReportFormat::Csv => put("report.csv", to_csv(report))?,
            ReportFormat::Json => put("report.json", to_json(report))?,
        }
    }
    Ok(written)
}
