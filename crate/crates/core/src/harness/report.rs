//! CSV, JSON and JSONL writers for result tables and traces.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::experiments::{AblationRow, SweepCell};
use super::{EpochRecord, HarnessError};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("row serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(io_err(path))
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Io {
        path: path.to_owned(),
        source: e.into(),
    })?;
    let csv_err = |e: csv::Error| HarnessError::Io {
        path: path.to_owned(),
        source: e.into(),
    };
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

pub fn write_epoch_trace(
    path: &Path,
    run_id: &str,
    trace: &[EpochRecord],
) -> Result<(), HarnessError> {
    #[derive(Serialize)]
    struct Line<'a> {
        run_id: &'a str,
        #[serde(flatten)]
        record: &'a EpochRecord,
    }
    let lines: Vec<Line> = trace.iter().map(|record| Line { run_id, record }).collect();
    write_jsonl(path, &lines)
}

/// Sweep table as CSV (percentages) and JSON.
pub fn write_sweep(dir: &Path, run_id: &str, cells: &[SweepCell]) -> Result<(), HarnessError> {
    let rows = cells
        .iter()
        .map(|c| {
            let m = c.metrics.as_ref();
            let get =
                |f: fn(&super::MetricsReport) -> f64| m.map(|m| pct(f(m))).unwrap_or_default();
            vec![
                run_id.to_owned(),
                c.alpha.to_string(),
                c.tau.to_string(),
                c.n_runs.to_string(),
                get(|m| m.accuracy),
                get(|m| m.precision),
                get(|m| m.recall),
                get(|m| m.f1),
                c.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &dir.join("sweep.csv"),
        &[
            "run_id",
            "alpha",
            "tau",
            "n_runs",
            "accuracy",
            "precision",
            "recall",
            "f1",
            "error",
        ],
        rows,
    )?;
    write_json(
        &dir.join("sweep.json"),
        &serde_json::json!({ "run_id": run_id, "cells": cells }),
    )
}

pub fn write_ablation(dir: &Path, run_id: &str, rows: &[AblationRow]) -> Result<(), HarnessError> {
    let table = rows
        .iter()
        .map(|r| {
            vec![
                run_id.to_owned(),
                r.variant.name().to_owned(),
                r.use_prompt_mip.to_string(),
                r.distill_enabled.to_string(),
                pct(r.metrics.accuracy),
                pct(r.metrics.precision),
                pct(r.metrics.recall),
                pct(r.metrics.f1),
            ]
        })
        .collect();
    write_csv(
        &dir.join("ablation.csv"),
        &[
            "run_id",
            "variant",
            "use_prompt_mip",
            "distill_enabled",
            "accuracy",
            "precision",
            "recall",
            "f1",
        ],
        table,
    )?;
    write_json(
        &dir.join("ablation.json"),
        &serde_json::json!({ "run_id": run_id, "rows": rows }),
    )
}
