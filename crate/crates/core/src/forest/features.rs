use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::unfold_blocks;
use crate::tensor::{Graph, Tensor};
use crate::tsf::{extract_all, Family, Mode, TsfConfig, TsfParams};

/// Block sizes and strides of each scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfFeatureConfig {
    pub scales: Vec<usize>,
    pub strides: Vec<usize>,
    pub tsf: TsfConfig,
}

impl RfFeatureConfig {
    /// Non-overlapping blocks at each scale.
    pub fn new(scales: Vec<usize>) -> Self {
        Self {
            strides: scales.clone(),
            scales,
            tsf: TsfConfig::default(),
        }
    }

    pub fn validate(&self, length: usize) -> Result<()> {
        if self.scales.is_empty() || self.scales.len() != self.strides.len() {
            return Err(Error::Config("need one stride per scale and at least one scale".into()));
        }
        for (&m, &s) in self.scales.iter().zip(&self.strides) {
            if m > length || s == 0 {
                return Err(Error::Config(format!(
                    "block {m} / stride {s} do not fit length {length}"
                )));
            }
            self.tsf.validate(m)?;
        }
        Ok(())
    }

    /// Width of one scale's per-channel anchor vector.
    pub fn anchor_width(&self, scale: usize) -> Result<usize> {
        Ok(self.tsf.layout(self.scales[scale])?.width())
    }
}

/// Hard anchors averaged over the blocks of each scale and concatenated
/// over scales: `count × Σ_s C·D_s`, ordered scale, channel, feature.
pub fn extract_rf_features(
    data: &WindowedDataset,
    cfg: &RfFeatureConfig,
    params: &TsfParams,
    batch: usize,
) -> Result<Tensor> {
    cfg.validate(data.length)?;
    if data.is_empty() {
        return Err(Error::Invalid("no windows to featurize".into()));
    }
    let c = data.channels;
    let width: usize = (0..cfg.scales.len())
        .map(|s| cfg.anchor_width(s).map(|d| c * d))
        .sum::<Result<_>>()?;
    let mut out = vec![0.0; data.len() * width];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let mut g = Graph::new();
        let vars = params.bind(&mut g, false);
        let x = g.constant(data.batch(chunk));
        let mut parts = Vec::with_capacity(cfg.scales.len());
        for (&m, &s) in cfg.scales.iter().zip(&cfg.strides) {
            let blocks = unfold_blocks(&mut g, x, m, s)?;
            let z = extract_all(&mut g, blocks, &vars, &cfg.tsf, Mode::Hard)?;
            let pooled = g.mean(z, 1, false)?;
            let d = g.shape(pooled)[2];
            parts.push(g.reshape(pooled, &[chunk.len(), c * d])?);
        }
        let all = g.concat(&parts, 1)?;
        for (r, &i) in chunk.iter().enumerate() {
            out[i * width..(i + 1) * width].copy_from_slice(&g.value(all).data()[r * width..(r + 1) * width]);
        }
    }
    Tensor::new(vec![data.len(), width], out)
}

/// Family index of every column produced by [`extract_rf_features`].
pub fn rf_column_families(cfg: &RfFeatureConfig, channels: usize) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for &m in &cfg.scales {
        let per = cfg.tsf.layout(m)?.column_family_index();
        for _ in 0..channels {
            out.extend_from_slice(&per);
        }
    }
    Ok(out)
}

/// Number of families addressed by [`rf_column_families`].
pub const RF_FAMILIES: usize = Family::ALL.len();
