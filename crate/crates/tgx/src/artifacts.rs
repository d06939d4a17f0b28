//! File names, tag checks and readers for the run directory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tgx_core::data::{self, Record};
use tgx_core::model::{self, Checkpoint, EpochRecord};

use crate::error::{CliError, CliResult};

pub const DATASET: &str = "dataset.jsonl";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const EMBEDDINGS: &str = "embeddings.jsonl";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const TRAIN_SUMMARY: &str = "train_summary.json";
pub const PROJECTION: &str = "projection.json";
pub const DMD_GLOBAL: &str = "dmd_global.json";
pub const EXPLANATIONS_DMD: &str = "explanations_dmd.jsonl";
pub const EXPLANATIONS_SINDY: &str = "explanations_sindy.jsonl";
pub const METRICS: &str = "metrics.csv";
pub const GRAPH_METRICS: &str = "graph_metrics.jsonl";
pub const MODE_SERIES: &str = "mode_series.csv";
pub const NODE_WEIGHTS: &str = "node_weights.csv";
pub const EDGE_WEIGHTS: &str = "edge_weights.csv";
pub const SPATIOTEMPORAL: &str = "spatiotemporal.csv";
pub const BRIER: &str = "brier.csv";
pub const SUMMARY: &str = "summary.txt";
pub const GRID: &str = "grid.csv";

/// Outcome of `tgx train` needed downstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub config_hash: String,
    pub best_epoch: usize,
    pub train_accuracy: f64,
    /// Accuracy on the held-out graphs; reported in the results table.
    pub val_accuracy: f64,
    /// One-step linear-fit residual of the training graphs' pooled states.
    pub linearity_residual: f64,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub history: Vec<EpochRecord>,
}

pub fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_owned(),
        source,
    }
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_error(parent))?;
    }
    File::create(path).map(BufWriter::new).map_err(io_error(path))
}

/// Opens an input produced by `stage`.
pub fn open(path: &Path, stage: &'static str) -> CliResult<BufReader<File>> {
    if !path.exists() {
        return Err(CliError::Missing {
            path: path.to_owned(),
            stage,
        });
    }
    File::open(path).map(BufReader::new).map_err(io_error(path))
}

pub fn check_tag(path: &Path, stage: &'static str, expected: &str, found: Option<&str>) -> CliResult<()> {
    match found {
        Some(tag) if tag == expected => Ok(()),
        other => Err(CliError::Stale {
            path: path.to_owned(),
            stage,
            expected: expected.to_owned(),
            found: other.unwrap_or("no hash").to_owned(),
        }),
    }
}

pub fn read_dataset(dir: &Path, expected: &str) -> CliResult<Vec<Record>> {
    let path = dir.join(DATASET);
    let (records, tag) = data::read_dataset_tagged(open(&path, "generate")?)?;
    check_tag(&path, "generate", expected, tag.as_deref())?;
    Ok(records)
}

pub fn read_checkpoint(dir: &Path, expected: &str) -> CliResult<Checkpoint> {
    let path = dir.join(CHECKPOINT);
    let ckpt = model::read_checkpoint(open(&path, "train")?)?;
    check_tag(&path, "train", expected, ckpt.config_hash.as_deref())?;
    Ok(ckpt)
}

pub fn read_train_summary(dir: &Path, expected: &str) -> CliResult<TrainSummary> {
    let path = dir.join(TRAIN_SUMMARY);
    let summary: TrainSummary = serde_json::from_reader(open(&path, "train")?)
        .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    check_tag(&path, "train", expected, Some(&summary.config_hash))?;
    Ok(summary)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut out = create(path)?;
    serde_json::to_writer(&mut out, value).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
    out.write_all(b"\n").map_err(io_error(path))?;
    out.flush().map_err(io_error(path))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    let mut out = create(path)?;
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        out.write_all(b"\n").map_err(io_error(path))?;
    }
    out.flush().map_err(io_error(path))
}

/// Something written with a `config_hash` field.
pub trait Tagged {
    fn tag(&self) -> Option<&str>;
}

/// Reads a JSON-lines artifact and checks that every line carries `expected`.
pub fn read_jsonl<T: DeserializeOwned + Tagged>(path: &Path, stage: &'static str, expected: &str) -> CliResult<Vec<T>> {
    let reader = open(path, stage)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line)
            .map_err(|e| CliError::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        check_tag(path, stage, expected, item.tag())?;
        out.push(item);
    }
    Ok(out)
}

/// Writes the `# config_hash` comment line that opens every CSV artifact.
pub fn csv_writer(path: &Path, hash: &str) -> CliResult<csv::Writer<BufWriter<File>>> {
    let mut out = create(path)?;
    writeln!(out, "# config_hash {hash}").map_err(io_error(path))?;
    Ok(csv::Writer::from_writer(out))
}

pub fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Format(format!("{}: {e}", path.display()))
}

/// Reads the hash from the comment line of a CSV artifact.
pub fn csv_tag(path: &Path, stage: &'static str) -> CliResult<Option<String>> {
    let mut first = String::new();
    open(path, stage)?.read_line(&mut first).map_err(io_error(path))?;
    Ok(first.trim().strip_prefix("# config_hash ").map(str::to_owned))
}
