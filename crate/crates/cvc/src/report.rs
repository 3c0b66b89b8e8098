//! JSON and CSV output of experiment reports.
//!
//! Every artifact carries the resolved configuration. Output is a pure
//! function of the configuration apart from the optional run stamp.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Result, RunError};
use crate::harness::{ExperimentReport, HoldoutReport};

/// Fixed CSV header of per-replication results.
pub const CSV_COLUMNS: [&str; 7] = [
    "replication",
    "model",
    "cv",
    "correction",
    "cv_c",
    "gen_error_mc",
    "gen_error_se",
];

/// Wall-clock facts about a run; left out when timestamps are disabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunStamp {
    pub generated_unix: u64,
    pub elapsed_seconds: f64,
}

impl RunStamp {
    pub fn since(start: Instant) -> Self {
        let generated_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            generated_unix,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        }
    }
}

#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    config: &'a Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    run: Option<RunStamp>,
    report: &'a T,
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| RunError::io(path, e))
}

/// Pretty JSON document wrapping a report with the configuration echo.
pub fn json_document<T: Serialize>(config: &Value, report: &T, stamp: Option<RunStamp>) -> String {
    let doc = Document {
        tool: "cvc",
        version: env!("CARGO_PKG_VERSION"),
        config,
        run: stamp,
        report,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("reports serialize");
    s.push('\n');
    s
}

fn preamble(config: &Value, series: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# cvc {} {series}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# config={config}");
    s
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

fn csv_text(rows: Vec<[String; 7]>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| RunError::config(format!("csv encoding failed: {e}"));
    w.write_record(CSV_COLUMNS).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| RunError::config(format!("csv encoding failed: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// One CSV per series: `<prefix>_<predictor>_<variance>.csv`, rows ordered
/// by replication and then model. Lines starting with `#` hold the
/// configuration echo.
pub fn experiment_csvs(config: &Value, report: &ExperimentReport) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for s in &report.series {
        let label = format!("{}_{}", s.predictor.replace(':', "-"), s.variance);
        let mut rows = Vec::new();
        for r in 0..report.replications {
            for m in &s.models {
                rows.push([
                    r.to_string(),
                    m.model.clone(),
                    m.cv[r].to_string(),
                    m.correction[r].to_string(),
                    m.cv_c[r].to_string(),
                    fmt_opt(m.gen_error.map(|g| g.mean)),
                    fmt_opt(m.gen_error.and_then(|g| g.se)),
                ]);
            }
        }
        out.push((label.clone(), preamble(config, &label) + &csv_text(rows)?));
    }
    Ok(out)
}

/// Per-run holdout rows; the generalization error columns carry the mean
/// test error over runs and its standard error.
pub fn holdout_csv(config: &Value, report: &HoldoutReport) -> Result<String> {
    let mut rows = Vec::new();
    for r in 0..report.runs {
        for m in &report.models {
            let test = crate::stats::MeanSe::from_values(&m.test_error);
            rows.push([
                r.to_string(),
                m.model.clone(),
                m.cv[r].to_string(),
                m.correction[r].to_string(),
                m.cv_c[r].to_string(),
                test.mean.to_string(),
                fmt_opt(test.se),
            ]);
        }
    }
    Ok(preamble(config, "holdout") + &csv_text(rows)?)
}

/// Write `<prefix>.json` and the per-series CSVs; returns the paths written.
pub fn write_experiment(
    prefix: &Path,
    config: &Value,
    report: &ExperimentReport,
    stamp: Option<RunStamp>,
) -> Result<Vec<PathBuf>> {
    let json = prefix.with_extension("json");
    write(&json, &json_document(config, report, stamp))?;
    let mut paths = vec![json];
    let stem = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    for (label, text) in experiment_csvs(config, report)? {
        let path = prefix.with_file_name(format!("{stem}_{label}.csv"));
        write(&path, &text)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn write_holdout(
    path: &Path,
    config: &Value,
    report: &HoldoutReport,
    stamp: Option<RunStamp>,
) -> Result<Vec<PathBuf>> {
    let json = path.with_extension("json");
    write(&json, &json_document(config, report, stamp))?;
    let csv = path.with_extension("csv");
    write(&csv, &holdout_csv(config, report)?)?;
    Ok(vec![json, csv])
}
