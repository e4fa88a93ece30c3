//! Scorecards, original-vs-finetuned comparison tables, fine-tune export
//! and the end-to-end run pipeline.

mod config;
mod export;
mod manifest;
mod run;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{CalibrationError, ScoredInstance};
use crate::corpus::CorpusError;
use crate::elicitation::ElicitError;

pub use config::{ModelPair, RunConfig};
pub use export::{export_finetune, largest_remainder, write_finetune, FinetunePair, DEFAULT_REPLICATION};
pub use manifest::{ModelRun, RunManifest, RunStatus};
pub use run::{prepare_instances, run, PreparedInstance, RunArtifacts, RunFailure, RunOptions};

pub const METRIC_CROSS_ENTROPY: &str = "cross_entropy";
pub const METRIC_DIRICHLET_NLL: &str = "dirichlet_nll";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no scored instances remain after exclusions")]
    NothingScored,
    #[error("percent change from an original value of zero")]
    DivisionByZero,
    #[error("inconsistent report grid: {0}")]
    InconsistentGrid(String),
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("scores line {line}: {detail}")]
    ScoresFile { line: usize, detail: String },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Elicit(#[from] ElicitError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

impl ReportError {
    pub(crate) fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Self::Io { path: path.display().to_string(), detail: err.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelScorecard {
    pub model: String,
    pub dataset: String,
    pub mean_cross_entropy: f64,
    pub mean_dirichlet_nll: f64,
    pub n_scored: usize,
}

/// Arithmetic means over the non-excluded instances.
///
/// Scores are summed in sorted order so the result does not depend on the
/// order instances arrive in.
pub fn aggregate(model: &str, dataset: &str, scores: &[ScoredInstance]) -> Result<ModelScorecard, ReportError> {
    let (mut ce, mut nll): (Vec<f64>, Vec<f64>) = scores.iter().filter_map(ScoredInstance::scores).unzip();
    if ce.is_empty() {
        return Err(ReportError::NothingScored);
    }
    ce.sort_by(f64::total_cmp);
    nll.sort_by(f64::total_cmp);
    let n = ce.len();
    Ok(ModelScorecard {
        model: model.to_string(),
        dataset: dataset.to_string(),
        mean_cross_entropy: ce.iter().sum::<f64>() / n as f64,
        mean_dirichlet_nll: nll.iter().sum::<f64>() / n as f64,
        n_scored: n,
    })
}

/// (finetuned − original) / original × 100, unrounded.
pub fn percent_change(original: f64, finetuned: f64) -> Result<f64, ReportError> {
    if original == 0.0 {
        return Err(ReportError::DivisionByZero);
    }
    Ok((finetuned - original) / original * 100.0)
}

/// Two decimals, halves away from zero.
pub fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub metric: String,
    pub original: f64,
    pub finetuned: f64,
    /// Rounded to two decimals.
    pub pct_change: f64,
}

impl ComparisonRow {
    pub fn new(model: &str, metric: &str, original: f64, finetuned: f64) -> Result<Self, ReportError> {
        Ok(Self {
            model: model.to_string(),
            metric: metric.to_string(),
            original,
            finetuned,
            pct_change: round2(percent_change(original, finetuned)?),
        })
    }
}

/// One row per metric comparing two scorecards of the same model.
pub fn compare(model: &str, original: &ModelScorecard, finetuned: &ModelScorecard) -> Result<Vec<ComparisonRow>, ReportError> {
    Ok(vec![
        ComparisonRow::new(model, METRIC_CROSS_ENTROPY, original.mean_cross_entropy, finetuned.mean_cross_entropy)?,
        ComparisonRow::new(model, METRIC_DIRICHLET_NLL, original.mean_dirichlet_nll, finetuned.mean_dirichlet_nll)?,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Self::Text),
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown format '{other}' (expected text, csv or json)")),
        }
    }
}

fn check_grid(rows: &[ComparisonRow]) -> Result<(), ReportError> {
    if rows.is_empty() {
        return Err(ReportError::InconsistentGrid("no rows".into()));
    }
    let mut by_model: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for row in rows {
        if !by_model.entry(&row.model).or_default().insert(&row.metric) {
            return Err(ReportError::InconsistentGrid(format!("duplicate row for {} / {}", row.model, row.metric)));
        }
        if ![row.original, row.finetuned].iter().all(|v| v.is_finite()) {
            return Err(ReportError::InconsistentGrid(format!("non-finite value for {} / {}", row.model, row.metric)));
        }
    }
    let mut sets = by_model.iter();
    let (first_model, first) = sets.next().expect("non-empty");
    for (model, metrics) in sets {
        if metrics != first {
            return Err(ReportError::InconsistentGrid(format!(
                "{model} has metrics {metrics:?} but {first_model} has {first:?}"
            )));
        }
    }
    Ok(())
}

fn pct_text(pct: f64) -> String {
    format!("{pct:.2}%")
}

/// Renders rows in input order. Every format carries `manifest_digest`.
pub fn render_report(rows: &[ComparisonRow], format: ReportFormat, manifest_digest: &str) -> Result<String, ReportError> {
    check_grid(rows)?;
    match format {
        ReportFormat::Text => Ok(render_text(rows, manifest_digest)),
        ReportFormat::Csv => render_csv(rows, manifest_digest),
        ReportFormat::Json => {
            let doc = serde_json::json!({ "manifest_digest": manifest_digest, "rows": rows });
            Ok(serde_json::to_string_pretty(&doc).expect("rows serialize") + "\n")
        }
    }
}

fn render_text(rows: &[ComparisonRow], digest: &str) -> String {
    let header = ["model", "metric", "original", "finetuned", "pct_change"];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                r.metric.clone(),
                format!("{:.4}", r.original),
                format!("{:.4}", r.finetuned),
                pct_text(r.pct_change),
            ]
        })
        .collect();
    format!("manifest {digest}\n\n{}", aligned_table(&header, &cells, 2))
}

/// Space-aligned table with a dashed rule under the header. The first
/// `left` columns are left-aligned, the rest right-aligned.
pub(crate) fn aligned_table(header: &[&str], cells: &[Vec<String>], left: usize) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let mut line = |row: &[&str]| {
        let mut text = String::new();
        for (i, (cell, &w)) in row.iter().zip(&widths).enumerate() {
            if i < left {
                let _ = write!(text, "{cell:<w$}  ");
            } else {
                let _ = write!(text, "{cell:>w$}  ");
            }
        }
        out.push_str(text.trim_end());
        out.push('\n');
    };
    line(header);
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    line(&rule.iter().map(String::as_str).collect::<Vec<_>>());
    for row in cells {
        line(&row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}

fn render_csv(rows: &[ComparisonRow], digest: &str) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ReportError::InconsistentGrid(e.to_string());
    w.write_record(["model", "metric", "original", "finetuned", "pct_change", "manifest_digest"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.model.as_str(),
            r.metric.as_str(),
            &r.original.to_string(),
            &r.finetuned.to_string(),
            &format!("{:.2}", r.pct_change),
            digest,
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::InconsistentGrid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Reads `model,metric,original,finetuned` rows (extra columns ignored) and
/// recomputes the percent change.
pub fn parse_rows_csv<R: std::io::Read>(reader: R) -> Result<Vec<ComparisonRow>, ReportError> {
    #[derive(Deserialize)]
    struct Raw {
        model: String,
        metric: String,
        original: f64,
        finetuned: f64,
    }
    let mut rows = Vec::new();
    for (i, rec) in csv::Reader::from_reader(reader).deserialize::<Raw>().enumerate() {
        let raw = rec.map_err(|e| ReportError::ScoresFile { line: i + 2, detail: e.to_string() })?;
        rows.push(ComparisonRow::new(&raw.model, &raw.metric, raw.original, raw.finetuned)?);
    }
    Ok(rows)
}

/// One line of a run's scores file: a scored instance tagged with the model
/// and role that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub model: String,
    pub role: String,
    #[serde(flatten)]
    pub score: ScoredInstance,
}

pub fn parse_scores<R: std::io::BufRead>(reader: R) -> Result<Vec<ScoredInstance>, ReportError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let err = |detail: String| ReportError::ScoresFile { line: i + 1, detail };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_scores<W: std::io::Write>(mut writer: W, scores: &[ScoredInstance]) -> std::io::Result<()> {
    for s in scores {
        serde_json::to_writer(&mut writer, s)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
