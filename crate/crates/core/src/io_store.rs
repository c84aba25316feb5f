//! On-disk recording format, dataset manifests, and result-table export.
//!
//! A recording lives in its own directory as `meta.json` plus `data.bin`
//! (channel-major little-endian f32, microvolts). A dataset is a directory of
//! recording directories plus a `manifest.json` at the root.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Class label of a recording. `ClassA` maps to label 0, `ClassB` to label 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    ClassA,
    ClassB,
}

impl ClassLabel {
    pub fn as_u8(self) -> u8 {
        match self {
            ClassLabel::ClassA => 0,
            ClassLabel::ClassB => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(ClassLabel::ClassA),
            1 => Ok(ClassLabel::ClassB),
            other => Err(PipelineError::Format(format!("bad class label {other}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub recording_id: String,
    /// Row letter A-F followed by a column number, e.g. "A1".
    pub well_id: String,
    pub class_label: ClassLabel,
    pub sampling_rate_hz: f64,
    pub n_channels: usize,
    pub n_samples: usize,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maturation_day: Option<i64>,
    pub units: String,
}

/// Extract the row letter of a well id, validating it is in A..F.
pub fn well_row(well_id: &str) -> Result<char> {
    let row = well_id
        .chars()
        .next()
        .ok_or_else(|| PipelineError::Format("empty well id".into()))?;
    if !('A'..='F').contains(&row) {
        return Err(PipelineError::Format(format!(
            "well row '{row}' outside A..F in well id '{well_id}'"
        )));
    }
    Ok(row)
}

impl RecordingMeta {
    pub fn validate(&self) -> Result<()> {
        if self.sampling_rate_hz <= 0.0 {
            return Err(PipelineError::Format("sampling_rate_hz must be > 0".into()));
        }
        if self.n_channels == 0 || self.n_samples == 0 {
            return Err(PipelineError::Format("empty recording dimensions".into()));
        }
        let expected = (self.sampling_rate_hz * self.duration_s).round() as usize;
        if expected != self.n_samples {
            return Err(PipelineError::Format(format!(
                "n_samples {} != round(rate*duration) {}",
                self.n_samples, expected
            )));
        }
        well_row(&self.well_id)?;
        if self.units != "microvolt" {
            return Err(PipelineError::Format(format!("units '{}' != microvolt", self.units)));
        }
        Ok(())
    }
}

/// A multi-channel voltage trace in microvolts, channel-major.
#[derive(Debug, Clone)]
pub struct Recording {
    pub meta: RecordingMeta,
    /// `samples[c]` holds channel c, length `meta.n_samples`.
    pub samples: Vec<Vec<f32>>,
}

impl Recording {
    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        if self.samples.len() != self.meta.n_channels {
            return Err(PipelineError::Format(format!(
                "channel count {} != meta {}",
                self.samples.len(),
                self.meta.n_channels
            )));
        }
        for (c, ch) in self.samples.iter().enumerate() {
            if ch.len() != self.meta.n_samples {
                return Err(PipelineError::Format(format!(
                    "channel {c} has {} samples, expected {}",
                    ch.len(),
                    self.meta.n_samples
                )));
            }
            if ch.iter().any(|v| !v.is_finite()) {
                return Err(PipelineError::Format(format!("non-finite sample on channel {c}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub recording_id: String,
    pub path: String,
    pub well_id: String,
    pub class_label: ClassLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator_seed: Option<u64>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.recording_id) {
                return Err(PipelineError::Format(format!(
                    "duplicate recording id '{}'",
                    e.recording_id
                )));
            }
            well_row(&e.well_id)?;
        }
        Ok(())
    }
}

/// Parse recording metadata from raw JSON bytes.
pub fn parse_meta(bytes: &[u8]) -> Result<RecordingMeta> {
    let meta: RecordingMeta = serde_json::from_slice(bytes)
        .map_err(|e| PipelineError::Format(format!("meta.json: {e}")))?;
    meta.validate()?;
    Ok(meta)
}

/// Parse a dataset manifest from raw JSON bytes.
pub fn parse_manifest(bytes: &[u8]) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_slice(bytes)
        .map_err(|e| PipelineError::Format(format!("manifest.json: {e}")))?;
    m.validate()?;
    Ok(m)
}

/// Decode channel-major little-endian f32 sample data. Fails on length
/// mismatch or non-finite values.
pub fn decode_samples(bytes: &[u8], n_channels: usize, n_samples: usize) -> Result<Vec<Vec<f32>>> {
    let expected = 4usize
        .checked_mul(n_channels)
        .and_then(|v| v.checked_mul(n_samples))
        .ok_or_else(|| PipelineError::Format("sample count overflow".into()))?;
    if bytes.len() != expected {
        return Err(PipelineError::Format(format!(
            "data.bin length {} != expected {expected}",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(n_channels);
    for c in 0..n_channels {
        let mut ch = Vec::with_capacity(n_samples);
        let base = c * n_samples * 4;
        for i in 0..n_samples {
            let off = base + i * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if !v.is_finite() {
                return Err(PipelineError::Format(format!(
                    "non-finite sample at channel {c} index {i}"
                )));
            }
            ch.push(v);
        }
        out.push(ch);
    }
    Ok(out)
}

/// Write `meta.json` and `data.bin` into `dir`, creating it if needed.
pub fn write_recording(rec: &Recording, dir: &Path) -> Result<()> {
    rec.validate()?;
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let meta_path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(&rec.meta)
        .map_err(|e| PipelineError::Format(e.to_string()))?;
    fs::write(&meta_path, json).map_err(|e| PipelineError::io(&meta_path, e))?;

    let mut buf = Vec::with_capacity(4 * rec.meta.n_channels * rec.meta.n_samples);
    for ch in &rec.samples {
        for &v in ch {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let data_path = dir.join("data.bin");
    fs::write(&data_path, buf).map_err(|e| PipelineError::io(&data_path, e))?;
    Ok(())
}

/// Read a recording from its directory.
pub fn read_recording(dir: &Path) -> Result<Recording> {
    let meta_path = dir.join("meta.json");
    let meta_bytes = fs::read(&meta_path).map_err(|e| PipelineError::io(&meta_path, e))?;
    let meta = parse_meta(&meta_bytes)?;
    let data_path = dir.join("data.bin");
    let data = fs::read(&data_path).map_err(|e| PipelineError::io(&data_path, e))?;
    let samples = decode_samples(&data, meta.n_channels, meta.n_samples)?;
    Ok(Recording { meta, samples })
}

pub fn write_manifest(m: &DatasetManifest, root: &Path) -> Result<()> {
    m.validate()?;
    fs::create_dir_all(root).map_err(|e| PipelineError::io(root, e))?;
    let path = root.join("manifest.json");
    let json = serde_json::to_string_pretty(m).map_err(|e| PipelineError::Format(e.to_string()))?;
    fs::write(&path, json).map_err(|e| PipelineError::io(&path, e))
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    let bytes = fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
    parse_manifest(&bytes)
}

/// A cell in a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Text(String),
    Num(f64),
    Int(i64),
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cell::Text(s) => write!(f, "{s}"),
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Int(v) => write!(f, "{v}"),
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}
impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}
impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

/// A simple homogeneous result table with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width mismatch");
        self.rows.push(row);
    }

    /// CSV with header, '.' decimals, LF line endings. Values containing
    /// commas or quotes are quoted.
    pub fn to_csv(&self) -> String {
        fn esc(s: &str) -> String {
            if s.contains(',') || s.contains('"') || s.contains('\n') {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        }
        let mut out = String::new();
        out.push_str(&self.columns.iter().map(|c| esc(c)).collect::<Vec<_>>().join(","));
        out.push('\n');
        for row in &self.rows {
            let line = row.iter().map(|c| esc(&c.to_string())).collect::<Vec<_>>().join(",");
            out.push_str(&line);
            out.push('\n');
        }
        out
    }

    /// JSON array of objects keyed by column name.
    pub fn to_json(&self) -> String {
        let objs: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut m = serde_json::Map::new();
                for (col, cell) in self.columns.iter().zip(row) {
                    let v = match cell {
                        Cell::Text(s) => serde_json::Value::String(s.clone()),
                        Cell::Num(n) => serde_json::json!(n),
                        Cell::Int(i) => serde_json::json!(i),
                    };
                    m.insert(col.clone(), v);
                }
                serde_json::Value::Object(m)
            })
            .collect();
        serde_json::to_string_pretty(&objs).expect("table serialization")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Csv,
    Json,
}

/// Write a table to `path` in the requested format.
pub fn export_table(table: &Table, path: &Path, format: TableFormat) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
        }
    }
    let body = match format {
        TableFormat::Csv => table.to_csv(),
        TableFormat::Json => table.to_json(),
    };
    fs::write(path, body).map_err(|e| PipelineError::io(path, e))
}
