//! File formats: dataset CSV, labels CSV, metrics CSV and JSON artifacts.
//!
//! Every text artifact starts with a provenance line (`# config_hash=… seed=…`
//! for CSV, top-level fields for JSON). CSV readers skip `#` lines.

use std::fs;
use std::io::Write;
use std::path::Path;

use legoqml_core::training::MetricsRow;
use legoqml_core::Dataset;
use serde::Serialize;

use crate::error::{HarnessError, Result};

pub const METRICS_HEADER: [&str; 7] = ["epoch", "train_loss", "train_acc", "test_loss", "test_acc", "grad_norm", "wallclock_s"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>, seed: u64) -> Self {
        Self { config_hash: config_hash.into(), seed }
    }

    pub fn comment_line(&self) -> String {
        format!("# config_hash={} seed={}\n", self.config_hash, self.seed)
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Parse { path: path.to_path_buf(), message: message.into() }
}

fn csv_writer(path: &Path, prov: &Provenance) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(prov.comment_line().as_bytes()).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let f = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(f))
}

fn csv_fail(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => parse_err(path, format!("{other:?}")),
    }
}

/// Header `f0..f{D-1},label`.
pub fn write_dataset_csv(path: &Path, data: &Dataset, prov: &Provenance) -> Result<()> {
    let mut w = csv_writer(path, prov)?;
    let mut header: Vec<String> = (0..data.input_dim()).map(|j| format!("f{j}")).collect();
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_fail(path, e))?;
    for (x, y) in data.features.iter().zip(&data.labels) {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec).map_err(|e| csv_fail(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| csv_fail(path, e))?.clone();
    let d = header.len().checked_sub(1).filter(|&d| d > 0).ok_or_else(|| parse_err(path, "need at least one feature column and a label column"))?;
    for (j, name) in header.iter().enumerate() {
        let want = if j == d { "label".to_string() } else { format!("f{j}") };
        if name.trim() != want {
            return Err(parse_err(path, format!("header column {j} is {name:?}, expected {want:?}")));
        }
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_fail(path, e))?;
        let x = (0..d)
            .map(|j| {
                rec[j].trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    parse_err(path, format!("row {}: column f{j} is not a finite number: {:?}", row + 1, &rec[j]))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let y = rec[d]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(path, format!("row {}: label {:?} is not a nonnegative integer", row + 1, &rec[d])))?;
        features.push(x);
        labels.push(y);
    }
    Dataset::new(features, labels).map_err(Into::into)
}

/// Companion labels file `id,label` for embedding datasets. Feature rows
/// are empty; the embedding block keys on the ids.
pub fn read_labels_csv(path: &Path) -> Result<Dataset> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| csv_fail(path, e))?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != ["id", "label"] {
        return Err(parse_err(path, format!("header must be id,label, got {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_fail(path, e))?;
        let id = rec[0].trim().parse::<u64>().map_err(|_| parse_err(path, format!("row {}: bad id {:?}", row + 1, &rec[0])))?;
        let y = rec[1].trim().parse::<usize>().map_err(|_| parse_err(path, format!("row {}: bad label {:?}", row + 1, &rec[1])))?;
        ids.push(id);
        labels.push(y);
    }
    let features = vec![Vec::new(); ids.len()];
    Dataset::with_ids(ids, features, labels).map_err(Into::into)
}

pub fn write_labels_csv(path: &Path, data: &Dataset, prov: &Provenance) -> Result<()> {
    let mut w = csv_writer(path, prov)?;
    w.write_record(["id", "label"]).map_err(|e| csv_fail(path, e))?;
    for (id, y) in data.ids.iter().zip(&data.labels) {
        w.write_record([id.to_string(), y.to_string()]).map_err(|e| csv_fail(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow], prov: &Provenance) -> Result<()> {
    let mut w = csv_writer(path, prov)?;
    w.write_record(METRICS_HEADER).map_err(|e| csv_fail(path, e))?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.test_loss.to_string(),
            r.test_acc.to_string(),
            r.grad_norm.to_string(),
            r.wallclock_s.to_string(),
        ])
        .map_err(|e| csv_fail(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv_reader(path)?;
    let header = r.headers().map_err(|e| csv_fail(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != METRICS_HEADER {
        return Err(parse_err(path, "unexpected metrics header"));
    }
    r.deserialize().map(|rec| rec.map_err(|e| csv_fail(path, e))).collect()
}

/// Generic table writer for sweep and experiment outputs.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>], prov: &Provenance) -> Result<()> {
    let mut w = csv_writer(path, prov)?;
    w.write_record(header).map_err(|e| csv_fail(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_fail(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}
