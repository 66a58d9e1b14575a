//! Windowing of long-format sensor CSV files described by a JSON manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::WindowedDataset;
use crate::error::{Error, Result};

/// Which CSV columns hold the signal channels, label and subject, and how to window them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvManifest {
    pub channels: Vec<String>,
    pub label_column: String,
    pub subject_column: String,
    pub window_length: usize,
    /// Fraction of a window shared with the next one, in [0, 1).
    #[serde(default)]
    pub overlap: f64,
    #[serde(default = "default_rate")]
    pub sampling_rate: f64,
    /// Files to read, relative to the directory; empty means every `*.csv`.
    #[serde(default)]
    pub files: Vec<String>,
}

fn default_rate() -> f64 {
    1.0
}

impl CsvManifest {
    pub fn stride(&self) -> usize {
        ((self.window_length as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImportReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub segments: usize,
    pub windows: usize,
}

struct Row {
    values: Vec<f32>,
    label: String,
    subject: String,
}

fn csv_files(dir: &Path, manifest: &CsvManifest) -> Result<Vec<PathBuf>> {
    if !manifest.files.is_empty() {
        return Ok(manifest.files.iter().map(|f| dir.join(f)).collect());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Invalid(format!("no CSV files in {}", dir.display())));
    }
    Ok(files)
}

fn read_rows(path: &Path, manifest: &CsvManifest, report: &mut ImportReport) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let chan_idx: Vec<usize> = manifest.channels.iter().map(|c| col(c)).collect::<Result<_>>()?;
    let label_idx = col(&manifest.label_column)?;
    let subject_idx = col(&manifest.subject_column)?;
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        report.rows_read += 1;
        let cell = |i: usize| rec.get(i).map(str::trim).filter(|s| !s.is_empty());
        let values: Option<Vec<f32>> = chan_idx
            .iter()
            .map(|&i| cell(i).and_then(|s| s.parse::<f32>().ok()).filter(|v| v.is_finite()))
            .collect();
        match (values, cell(label_idx), cell(subject_idx)) {
            (Some(values), Some(label), Some(subject)) => rows.push(Row {
                values,
                label: label.to_string(),
                subject: subject.to_string(),
            }),
            _ => report.rows_dropped += 1,
        }
    }
    Ok(rows)
}

/// Numeric ids sort numerically, anything else lexicographically.
fn index_values(values: impl Iterator<Item = String>) -> BTreeMap<String, usize> {
    let mut uniq: Vec<String> = values.collect();
    uniq.sort();
    uniq.dedup();
    if uniq.iter().all(|v| v.parse::<f64>().is_ok()) {
        uniq.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    }
    uniq.into_iter().enumerate().map(|(i, v)| (v, i)).collect()
}

/// Cuts windows from contiguous runs of rows sharing subject and label.
/// Rows with an empty or non-numeric declared cell are dropped and counted.
pub fn import_csv(dir: &Path, manifest: &CsvManifest) -> Result<(WindowedDataset, ImportReport)> {
    let l = manifest.window_length;
    if l == 0 || manifest.channels.is_empty() || !(0.0..1.0).contains(&manifest.overlap) {
        return Err(Error::Config(
            "manifest needs channels, window_length > 0, overlap in [0, 1)".into(),
        ));
    }
    let mut report = ImportReport::default();
    let mut rows = Vec::new();
    for f in csv_files(dir, manifest)? {
        rows.extend(read_rows(&f, manifest, &mut report)?);
    }
    let classes = index_values(rows.iter().map(|r| r.label.clone()));
    let subject_ids = index_values(rows.iter().map(|r| r.subject.clone()));
    let subject_of = |s: &str| -> i32 { s.parse::<i32>().unwrap_or(subject_ids[s] as i32) };
    let c = manifest.channels.len();
    let stride = manifest.stride();
    let mut windows = Vec::new();
    let mut labels = Vec::new();
    let mut subjects = Vec::new();
    let mut start = 0;
    while start < rows.len() {
        let mut end = start + 1;
        while end < rows.len() && rows[end].label == rows[start].label && rows[end].subject == rows[start].subject {
            end += 1;
        }
        report.segments += 1;
        let seg = &rows[start..end];
        let mut s = 0;
        while s + l <= seg.len() {
            for ch in 0..c {
                windows.extend(seg[s..s + l].iter().map(|r| r.values[ch]));
            }
            labels.push(classes[&seg[0].label] as i32);
            subjects.push(subject_of(&seg[0].subject));
            s += stride;
        }
        start = end;
    }
    report.windows = labels.len();
    if labels.is_empty() {
        return Err(Error::Invalid(
            "no complete window could be cut from the CSV rows".into(),
        ));
    }
    let ds = WindowedDataset {
        channels: c,
        length: l,
        n_classes: classes.len(),
        sampling_rate: manifest.sampling_rate,
        windows,
        labels,
        subjects,
        channel_names: manifest.channels.clone(),
        class_names: {
            let mut names: Vec<(usize, String)> = classes.into_iter().map(|(k, v)| (v, k)).collect();
            names.sort();
            names.into_iter().map(|(_, k)| k).collect()
        },
    };
    ds.validate()?;
    Ok((ds, report))
}
