use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const METRICS_HEADER: &str = "epoch,step,train_loss,eval_loss,eval_accuracy,base_lr_value,wall_ms";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: u64,
    pub step: u64,
    pub train_loss: f64,
    pub eval_loss: f64,
    pub eval_accuracy: f64,
    pub base_lr_value: f64,
    pub wall_ms: u64,
}

pub fn write_metrics_csv<W: Write>(out: W, rows: &[MetricRow]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(METRICS_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a metrics file, rejecting any header other than the exact column
/// list and accuracies outside `[0, 1]`.
pub fn parse_metrics_csv(bytes: &[u8]) -> Result<Vec<MetricRow>, String> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header = r.headers().map_err(|e| e.to_string())?;
    if header.iter().collect::<Vec<_>>().join(",") != METRICS_HEADER {
        return Err(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize::<MetricRow>().enumerate() {
        let row = rec.map_err(|e| format!("row {}: {e}", i + 1))?;
        if !(0.0..=1.0).contains(&row.eval_accuracy) && !row.eval_accuracy.is_nan() {
            return Err(format!("row {}: accuracy {} outside [0, 1]", i + 1, row.eval_accuracy));
        }
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub name: String,
    pub epochs: u64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub final_loss: f64,
    pub best_loss: f64,
    /// First logged epoch whose accuracy reached the threshold.
    pub epochs_to_threshold: Option<u64>,
}

pub fn summarize(name: String, rows: &[MetricRow], threshold: f64) -> RunSummary {
    let last = rows.last();
    let acc = rows.iter().map(|r| r.eval_accuracy).filter(|a| !a.is_nan());
    let loss = rows.iter().map(|r| r.eval_loss).filter(|l| !l.is_nan());
    RunSummary {
        name,
        epochs: last.map_or(0, |r| r.epoch),
        final_accuracy: last.map_or(f64::NAN, |r| r.eval_accuracy),
        best_accuracy: acc.fold(f64::NAN, f64::max),
        final_loss: last.map_or(f64::NAN, |r| r.eval_loss),
        best_loss: loss.fold(f64::NAN, f64::min),
        epochs_to_threshold: rows.iter().find(|r| r.eval_accuracy >= threshold).map(|r| r.epoch),
    }
}

/// A path may be a run directory or a metrics file.
fn metrics_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("metrics.csv")
    } else {
        p.to_path_buf()
    }
}

/// One summary per path, sorted by best accuracy (descending, stable, runs
/// without any accuracy last).
pub fn compare_runs<P: AsRef<Path>>(paths: &[P], threshold: f64) -> Result<Vec<RunSummary>, HarnessError> {
    let mut out = Vec::with_capacity(paths.len());
    for p in paths {
        let path = metrics_path(p.as_ref());
        let bytes = std::fs::read(&path).map_err(|source| HarnessError::Io {
            path: path.clone(),
            source,
        })?;
        let rows = parse_metrics_csv(&bytes).map_err(|message| HarnessError::BadMetrics {
            path: path.clone(),
            message,
        })?;
        out.push(summarize(p.as_ref().display().to_string(), &rows, threshold));
    }
    out.sort_by(|a, b| {
        let key = |s: &RunSummary| if s.best_accuracy.is_nan() { f64::NEG_INFINITY } else { s.best_accuracy };
        key(b).total_cmp(&key(a))
    });
    Ok(out)
}

pub fn format_summary_table(rows: &[RunSummary], threshold: f64) -> String {
    let width = rows.iter().map(|r| r.name.len()).max().unwrap_or(3).max(3);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>6}  {:>9}  {:>8}  {:>10}  {:>9}  {:>8}",
        "run",
        "epochs",
        "final_acc",
        "best_acc",
        "final_loss",
        "best_loss",
        format!("ep@{threshold}")
    );
    for r in rows {
        let hit = r.epochs_to_threshold.map_or("-".to_string(), |e| e.to_string());
        let _ = writeln!(
            s,
            "{:<width$}  {:>6}  {:>9.4}  {:>8.4}  {:>10.4}  {:>9.4}  {:>8}",
            r.name, r.epochs, r.final_accuracy, r.best_accuracy, r.final_loss, r.best_loss, hit
        );
    }
    s
}
