//! In-memory windowed dataset and its "TCN1" binary file format.
//!
//! Layout (little-endian): magic "TCN1", u32 version, u32 windows, u32
//! channels, u32 length, u32 n_classes, f64 sampling rate, u32 metadata
//! length, JSON metadata (channel and class names), f32 windows
//! (count×C×L), i32 labels, i32 subjects.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TCN1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct WindowedDataset {
    pub channels: usize,
    pub length: usize,
    pub n_classes: usize,
    pub sampling_rate: f64,
    /// Row-major `count × channels × length`.
    pub windows: Vec<f32>,
    pub labels: Vec<i32>,
    pub subjects: Vec<i32>,
    pub channel_names: Vec<String>,
    pub class_names: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    channel_names: Vec<String>,
    class_names: Vec<String>,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn window_size(&self) -> usize {
        self.channels * self.length
    }

    pub fn window(&self, i: usize) -> &[f32] {
        let w = self.window_size();
        &self.windows[i * w..(i + 1) * w]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels_usize(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }

    /// Windows `idx` as a `B×C×L` tensor.
    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(idx.len() * self.window_size());
        for &i in idx {
            data.extend(self.window(i).iter().map(|&v| f64::from(v)));
        }
        Tensor::new(vec![idx.len(), self.channels, self.length], data).expect("non-empty batch")
    }

    pub fn batch_labels(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.label(i)).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut windows = Vec::with_capacity(idx.len() * self.window_size());
        for &i in idx {
            windows.extend_from_slice(self.window(i));
        }
        Self {
            windows,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            subjects: idx.iter().map(|&i| self.subjects[i]).collect(),
            channel_names: self.channel_names.clone(),
            class_names: self.class_names.clone(),
            ..*self
        }
    }

    /// Indices of windows whose subject satisfies `keep`.
    pub fn indices_where(&self, keep: impl Fn(i32) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&i| keep(self.subjects[i])).collect()
    }

    /// Distinct subject ids in ascending order.
    pub fn subject_ids(&self) -> Vec<i32> {
        let mut ids = self.subjects.clone();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// The highest-numbered `round(fraction·S)` subjects, at least one, and
    /// never all of them.
    pub fn default_test_subjects(&self, fraction: f64) -> Result<Vec<i32>> {
        let ids = self.subject_ids();
        if ids.len() < 2 {
            return Err(Error::Invalid(format!(
                "a subject-disjoint split needs at least 2 subjects, found {}",
                ids.len()
            )));
        }
        let n = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
        Ok(ids[ids.len() - n..].to_vec())
    }

    /// `(train, test)` with every window of a `test` subject in the test part.
    pub fn split_subjects(&self, test: &[i32]) -> (Self, Self) {
        let tr = self.indices_where(|s| !test.contains(&s));
        let te = self.indices_where(|s| test.contains(&s));
        (self.subset(&tr), self.subset(&te))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.subjects.len() != n || self.windows.len() != n * self.window_size() {
            return Err(Error::Invalid("window, label and subject counts disagree".into()));
        }
        if self.channels == 0 || self.length == 0 {
            return Err(Error::Invalid("channels and length must be positive".into()));
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l < 0 || l as usize >= self.n_classes) {
            return Err(Error::Invalid(format!("label {l} outside [0, {})", self.n_classes)));
        }
        if !self.windows.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset windows".into()));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let meta = serde_json::to_string(&Meta {
            channel_names: self.channel_names.clone(),
            class_names: self.class_names.clone(),
        })?;
        let mut out = Vec::with_capacity(48 + meta.len() + self.windows.len() * 4 + self.len() * 8);
        out.extend_from_slice(MAGIC);
        for v in [
            VERSION,
            self.len() as u32,
            self.channels as u32,
            self.length as u32,
            self.n_classes as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.sampling_rate.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(meta.as_bytes());
        for v in &self.windows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.labels.iter().chain(&self.subjects) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut c = container::open(bytes, MAGIC, VERSION)?;
        let count = c.u32("window count")? as usize;
        let channels = c.u32("channel count")? as usize;
        let length = c.u32("window length")? as usize;
        let n_classes = c.u32("class count")? as usize;
        let sampling_rate = c.f64("sampling rate")?;
        let meta_len = c.u32("metadata length")? as usize;
        let meta: Meta = serde_json::from_slice(c.take(meta_len, "metadata")?)
            .map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let n = count
            .checked_mul(channels)
            .and_then(|v| v.checked_mul(length))
            .ok_or_else(|| Error::Format("window dimensions overflow".into()))?;
        let raw = c.take(n * 4, "windows")?;
        let windows = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let ints = |c: &mut container::Cursor, what: &str| -> Result<Vec<i32>> {
            let raw = c.take(count * 4, what)?;
            Ok(raw
                .chunks_exact(4)
                .map(|b| i32::from_le_bytes(b.try_into().unwrap()))
                .collect())
        };
        let labels = ints(&mut c, "labels")?;
        let subjects = ints(&mut c, "subjects")?;
        if c.remaining() != 0 {
            return Err(Error::Format(format!("{} trailing bytes", c.remaining())));
        }
        let ds = Self {
            channels,
            length,
            n_classes,
            sampling_rate,
            windows,
            labels,
            subjects,
            channel_names: meta.channel_names,
            class_names: meta.class_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
