use serde::{Deserialize, Serialize};

use crate::correction::CorrectionConfig;
use crate::error::{Error, Result};
use crate::tsf::TsfConfig;

/// Shape and width settings for [`super::TcNet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub channels: usize,
    pub length: usize,
    pub n_classes: usize,
    /// Block size per scale.
    pub scales: Vec<usize>,
    /// Stride per scale; empty means non-overlapping blocks.
    #[serde(default)]
    pub strides: Vec<usize>,
    pub d_proj: usize,
    pub d_ctx: usize,
    pub time_kernels: Vec<usize>,
    /// Output channels of each time-branch convolution.
    pub time_channels: usize,
    pub fft_sizes: Vec<usize>,
    /// Channels after the 1×1 spectrogram mixing convolution.
    pub freq_channels: usize,
    pub mixer_width: usize,
    /// Drop FFT sizes longer than the window instead of failing.
    #[serde(default)]
    pub skip_long_fft: bool,
    pub sensor_groups: Vec<Vec<usize>>,
    /// Block context pools over sensor groups instead of raw channels.
    #[serde(default)]
    pub group_block_context: bool,
    #[serde(default)]
    pub disable_time: bool,
    #[serde(default)]
    pub disable_freq: bool,
    #[serde(default)]
    pub disable_correction: bool,
    pub tsf: TsfConfig,
    pub correction: CorrectionConfig,
    pub seed: u64,
}

/// Consecutive channel triples; a trailing remainder forms its own group.
pub fn default_sensor_groups(channels: usize) -> Vec<Vec<usize>> {
    (0..channels)
        .step_by(3)
        .map(|s| (s..(s + 3).min(channels)).collect())
        .collect()
}

impl ModelConfig {
    /// Full-width defaults for a given input shape.
    pub fn new(channels: usize, length: usize, n_classes: usize, scales: Vec<usize>, k_views: usize) -> Self {
        let d_ctx = 256;
        Self {
            channels,
            length,
            n_classes,
            scales,
            strides: Vec::new(),
            d_proj: 128,
            d_ctx,
            time_kernels: vec![5, 11, 21],
            time_channels: 32,
            fft_sizes: vec![32, 64, 128],
            freq_channels: 8,
            mixer_width: 64,
            skip_long_fft: false,
            sensor_groups: default_sensor_groups(channels),
            group_block_context: false,
            disable_time: false,
            disable_freq: false,
            disable_correction: false,
            tsf: TsfConfig::default(),
            correction: CorrectionConfig {
                k_views,
                hidden: d_ctx / 2,
                ..CorrectionConfig::default()
            },
            seed: 0,
        }
    }

    /// Small widths for desk-scale experiments.
    pub fn tiny(channels: usize, length: usize, n_classes: usize, scales: Vec<usize>, k_views: usize) -> Self {
        let mut c = Self::new(channels, length, n_classes, scales, k_views);
        c.d_proj = 32;
        c.d_ctx = 32;
        c.time_channels = 8;
        c.mixer_width = 32;
        c.correction.hidden = 16;
        c.correction.d_block = 16;
        c
    }

    pub fn stride(&self, scale_index: usize) -> usize {
        self.strides
            .get(scale_index)
            .copied()
            .unwrap_or(self.scales[scale_index])
    }

    /// Number of views actually produced.
    pub fn effective_views(&self) -> usize {
        if self.disable_correction {
            1
        } else {
            self.correction.k_views
        }
    }

    /// FFT sizes that fit inside the window.
    pub fn active_fft_sizes(&self) -> Vec<usize> {
        self.fft_sizes
            .iter()
            .copied()
            .filter(|&n| !self.skip_long_fft || n <= self.length)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.length == 0 || self.n_classes < 2 {
            return bad("channels, length must be positive and n_classes >= 2".into());
        }
        if self.scales.is_empty() {
            return bad("at least one block scale is required".into());
        }
        if !self.strides.is_empty() && self.strides.len() != self.scales.len() {
            return bad("strides must be empty or match scales".into());
        }
        for (i, &m) in self.scales.iter().enumerate() {
            if m > self.length {
                return bad(format!("block size {m} exceeds window length {}", self.length));
            }
            if self.stride(i) == 0 {
                return bad("strides must be >= 1".into());
            }
            self.tsf.validate(m)?;
        }
        if self.d_proj < 7 {
            return bad("d_proj must allow one column per family".into());
        }
        let mut seen = vec![false; self.channels];
        for grp in &self.sensor_groups {
            if grp.is_empty() {
                return bad("empty sensor group".into());
            }
            for &c in grp {
                if c >= self.channels || std::mem::replace(&mut seen[c], true) {
                    return bad(format!("sensor groups must partition 0..{}", self.channels));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return bad(format!("sensor groups must partition 0..{}", self.channels));
        }
        if let Some(&k) = self.time_kernels.iter().max() {
            if k > self.length {
                return Err(Error::Invalid(format!(
                    "window length {} is shorter than time kernel {k}",
                    self.length
                )));
            }
        } else {
            return bad("time branch needs at least one kernel".into());
        }
        let ffts = self.active_fft_sizes();
        if ffts.is_empty() {
            return bad("no FFT size fits the window".into());
        }
        if let Some(&n) = ffts.iter().find(|&&n| n > self.length) {
            return Err(Error::Invalid(format!(
                "window length {} is shorter than FFT size {n} (enable skip_long_fft to drop it)",
                self.length
            )));
        }
        if ffts.iter().any(|&n| n < 2) {
            return bad("FFT sizes must be >= 2".into());
        }
        self.correction.validate()
    }
}

/// Named configuration bundles mirroring common benchmark shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub model: ModelConfig,
    pub lr: f64,
    pub epochs: usize,
}

pub const PRESET_NAMES: [&str; 6] = [
    "uci-har-shape",
    "usc-had-shape",
    "daphnet-shape",
    "mhealth-shape",
    "pamap2-shape",
    "tiny",
];

pub fn preset(name: &str) -> Result<Preset> {
    let make = |c: usize, l: usize, k: usize, scales: Vec<usize>, views: usize, lr: f64, epochs: usize| Preset {
        name: name.to_string(),
        model: ModelConfig::new(c, l, k, scales, views),
        lr,
        epochs,
    };
    let p = match name {
        "uci-har-shape" => make(9, 128, 6, vec![32, 128], 4, 5e-4, 300),
        "usc-had-shape" => make(6, 200, 12, vec![50, 100], 2, 3e-4, 300),
        "daphnet-shape" => make(9, 192, 2, vec![32, 192], 4, 1e-3, 300),
        "mhealth-shape" => {
            let mut p = make(15, 100, 12, vec![32, 64], 4, 1e-3, 50);
            p.model.skip_long_fft = true;
            p
        }
        "pamap2-shape" => make(36, 256, 12, vec![32, 128], 4, 1e-3, 120),
        "tiny" => Preset {
            name: name.to_string(),
            model: ModelConfig::tiny(3, 128, 3, vec![32, 128], 2),
            lr: 3e-3,
            epochs: 30,
        },
        _ => {
            return Err(Error::Config(format!(
                "unknown preset `{name}` (known: {})",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(p)
}
