//! Method-by-metric result tables.

use std::path::Path;

use serde::Serialize;

use super::metrics::{aggregate_runs, AggregateReport, MetricsReport};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: String,
    pub runs: Vec<MetricsReport>,
    pub aggregate: AggregateReport,
}

impl MethodResult {
    pub fn new(method: impl Into<String>, runs: Vec<MetricsReport>) -> Result<Self> {
        let aggregate = aggregate_runs(&runs)?;
        Ok(MethodResult { method: method.into(), runs, aggregate })
    }
}

const HEADERS: [&str; 5] = ["Method", "Accuracy", "AUC", "Sensitivity", "Specificity"];

/// Plain-text table, one row per method, `mean±std` cells.
pub fn format_table(rows: &[MethodResult]) -> String {
    let cells: Vec<[String; 5]> = rows
        .iter()
        .map(|r| {
            let a = &r.aggregate;
            [
                r.method.clone(),
                a.accuracy.to_string(),
                a.auc.to_string(),
                a.sensitivity.to_string(),
                a.specificity.to_string(),
            ]
        })
        .collect();
    let mut widths = HEADERS.map(|h| h.chars().count());
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |row: &[String]| {
        let parts: Vec<String> = row
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        parts.join(" | ").trim_end().to_string()
    };
    let mut out = line(&HEADERS.map(String::from));
    out.push('\n');
    out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-|-"));
    out.push('\n');
    for row in &cells {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// One line per (method, run).
pub fn write_metrics_csv(path: &Path, rows: &[MethodResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["method", "seed", "accuracy", "auc", "sensitivity", "specificity"])
        .map_err(|e| csv_err(path, e))?;
    for r in rows {
        for run in &r.runs {
            w.write_record([
                r.method.clone(),
                run.seed.map(|s| s.to_string()).unwrap_or_default(),
                run.accuracy.to_string(),
                run.auc.to_string(),
                run.sensitivity.to_string(),
                run.specificity.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<S: Serialize + ?Sized>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e.into()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
