//! Per-model, per-layer result rows and their CSV/JSON serialization.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ProbeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaRow {
    pub model: String,
    pub layer: u32,
    pub property: String,
    pub pool: String,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwdRow {
    pub model: String,
    pub layer: u32,
    pub mode: String,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegRow {
    pub model: String,
    pub layer: u32,
    pub metric: String,
    pub prominence: f64,
    pub window: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub rvalue: f64,
}

/// One Spearman correlation. Baseline rows carry the stream name as the
/// model (`fbank`, `text`); the text baseline has no layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StsRow {
    pub model: String,
    pub layer: Option<u32>,
    pub rho: f64,
    pub n_pairs: usize,
}

/// All result tables of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub cca: Vec<CcaRow>,
    pub awd: Vec<AwdRow>,
    pub segment: Vec<SegRow>,
    pub sts: Vec<StsRow>,
}

fn csv_err(path: &Path, e: csv::Error) -> ProbeError {
    ProbeError::Format(format!("{}: {e}", path.display()))
}

/// Writes rows with a header line. An empty table still gets its header.
pub fn write_csv<T: Table>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| ProbeError::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(BufWriter::new(file));
    w.write_record(T::HEADER).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| ProbeError::io(path, e))
}

/// A result row with a fixed column order.
pub trait Table: Serialize {
    const HEADER: &'static [&'static str];
}

impl Table for CcaRow {
    const HEADER: &'static [&'static str] =
        &["model", "layer", "property", "pool", "mean", "min", "max"];
}

impl Table for AwdRow {
    const HEADER: &'static [&'static str] = &["model", "layer", "mode", "ap"];
}

impl Table for SegRow {
    const HEADER: &'static [&'static str] = &[
        "model",
        "layer",
        "metric",
        "prominence",
        "window",
        "precision",
        "recall",
        "f1",
        "rvalue",
    ];
}

impl Table for StsRow {
    const HEADER: &'static [&'static str] = &["model", "layer", "rho", "n_pairs"];
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| csv_err(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| ProbeError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| ProbeError::Format(format!("{}: {e}", path.display())))?;
    w.write_all(b"\n").map_err(|e| ProbeError::io(path, e))?;
    w.flush().map_err(|e| ProbeError::io(path, e))
}
