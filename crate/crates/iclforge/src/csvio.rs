//! CSV tables: metric rows, cross-seed aggregates, probe series and n-gram
//! reports.

use std::io::Write;
use std::path::Path;

use iclforge_core::ngram::NGramReport;
use iclforge_core::train::{AggregateRow, MetricLog, MetricRow};
use serde::{Deserialize, Serialize};

use crate::binio::write_file;
use crate::{Error, Result};

pub const METRIC_HEADER: &str = "step,seed,split,value";

#[derive(Debug, Serialize, Deserialize)]
struct MetricRecord {
    step: u64,
    seed: u64,
    split: String,
    value: f64,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte());
    Error::Format {
        path: path.to_path_buf(),
        what: "CSV",
        offset,
        detail: e.to_string(),
    }
}

fn to_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>, header: &str) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV write");
    }
    let mut out = format!("{header}\n").into_bytes();
    out.extend(w.into_inner().expect("in-memory CSV flush"));
    out
}

pub fn metric_rows_csv(rows: &[MetricRow]) -> Vec<u8> {
    to_bytes(
        rows.iter().map(|r| MetricRecord {
            step: r.step,
            seed: r.seed,
            split: r.split.clone(),
            value: r.value,
        }),
        METRIC_HEADER,
    )
}

pub fn write_metrics(log: &MetricLog, path: &Path) -> Result<()> {
    write_file(path, &metric_rows_csv(log.rows()))
}

/// Reads raw metric rows, duplicates included.
pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != METRIC_HEADER {
        return Err(Error::Format {
            path: path.to_path_buf(),
            what: "CSV",
            offset: 0,
            detail: format!("header must be {METRIC_HEADER}"),
        });
    }
    r.deserialize::<MetricRecord>()
        .map(|rec| {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            Ok(MetricRow {
                step: rec.step,
                seed: rec.seed,
                split: rec.split,
                value: rec.value,
            })
        })
        .collect()
}

/// Reads a metric file into a log; steps must increase per (seed, split).
pub fn read_metrics(path: &Path) -> Result<MetricLog> {
    let mut log = MetricLog::new();
    for r in read_metric_rows(path)? {
        log.push(r.step, r.seed, &r.split, r.value)?;
    }
    Ok(log)
}

/// Appends rows to a metric file, writing the header if the file is new.
pub fn append_metric_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let bytes = metric_rows_csv(rows);
    let fresh = !path.exists();
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let body = if fresh {
        &bytes[..]
    } else {
        &bytes[METRIC_HEADER.len() + 1..]
    };
    f.write_all(body).map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct AggregateRecord<'a> {
    step: u64,
    split: &'a str,
    mean: f64,
    std: f64,
    runs: usize,
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> Vec<u8> {
    to_bytes(
        rows.iter().map(|r| AggregateRecord {
            step: r.step,
            split: &r.split,
            mean: r.mean,
            std: r.std,
            runs: r.runs,
        }),
        "step,split,mean,std,runs",
    )
}

/// One probe value of one head at one checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub step: u64,
    pub seed: u64,
    pub layer: usize,
    pub head: usize,
    pub metric: String,
    pub value: f64,
}

pub const PROBE_HEADER: &str = "step,seed,layer,head,metric,value";

pub fn probe_csv(rows: &[ProbeRecord]) -> Vec<u8> {
    to_bytes(rows, PROBE_HEADER)
}

pub fn read_probe_rows(path: &Path) -> Result<Vec<ProbeRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|rec| rec.map_err(|e| csv_error(path, e))).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NGramRecord {
    pub n: usize,
    pub window: usize,
    pub avg_repetitions: f64,
    pub windows_counted: usize,
}

pub const NGRAM_HEADER: &str = "n,window,avg_repetitions,windows_counted";

pub fn ngram_csv(report: &NGramReport) -> Vec<u8> {
    to_bytes(
        report.rows.iter().map(|r| NGramRecord {
            n: r.n,
            window: report.window,
            avg_repetitions: r.avg_repetitions,
            windows_counted: r.windows,
        }),
        NGRAM_HEADER,
    )
}

pub fn read_ngram_rows(path: &Path) -> Result<Vec<NGramRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize().map(|rec| rec.map_err(|e| csv_error(path, e))).collect()
}
