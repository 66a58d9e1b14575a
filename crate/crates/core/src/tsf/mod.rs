//! Handcrafted time-series feature families ("anchors") computed per block
//! and channel, with differentiable soft variants and exact hard twins.
//!
//! Every family works on a row matrix `[R, m]` where each row is one
//! (window, block, channel) signal; [`extract_all`] handles the reshaping
//! from and to the `B×N×m×C` block layout.

mod autocorr;
mod crossings;
mod filterbank;
mod spectral;
mod stats;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub use autocorr::autocorr_rows;
pub use crossings::crossings_rows;
pub use filterbank::{band_edges, filterbank_rows};
pub use spectral::spectral_rows;
pub use stats::{shape_rows, statistics_rows};

/// Soft (differentiable) or hard (exact) evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Soft,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    Filterbank,
    Spectral,
    Statistics,
    Shape,
    Crossing,
    Quantiles,
    Autocorr,
}

impl Family {
    pub const ALL: [Family; 7] = [
        Family::Filterbank,
        Family::Spectral,
        Family::Statistics,
        Family::Shape,
        Family::Crossing,
        Family::Quantiles,
        Family::Autocorr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Filterbank => "filterbank",
            Family::Spectral => "spectral",
            Family::Statistics => "statistics",
            Family::Shape => "shape",
            Family::Crossing => "crossing",
            Family::Quantiles => "quantiles",
            Family::Autocorr => "autocorr",
        }
    }

    pub fn index(self) -> usize {
        Family::ALL.iter().position(|&f| f == self).unwrap()
    }
}

/// Column ranges of each family inside the anchor vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FamilyLayout {
    ranges: Vec<(Family, Range<usize>)>,
}

impl FamilyLayout {
    pub fn from_widths(widths: &[(Family, usize)]) -> Result<Self> {
        let mut start = 0;
        let mut ranges = Vec::with_capacity(widths.len());
        for &(f, w) in widths {
            if w == 0 {
                return Err(Error::Config(format!("family {} has zero width", f.name())));
            }
            ranges.push((f, start..start + w));
            start += w;
        }
        Ok(Self { ranges })
    }

    pub fn width(&self) -> usize {
        self.ranges.last().map_or(0, |(_, r)| r.end)
    }

    pub fn families(&self) -> impl Iterator<Item = (Family, Range<usize>)> + '_ {
        self.ranges.iter().cloned()
    }

    pub fn range(&self, f: Family) -> Option<Range<usize>> {
        self.ranges.iter().find(|(g, _)| *g == f).map(|(_, r)| r.clone())
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// Family index of every column, for broadcasting family-level values.
    pub fn column_family_index(&self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.width());
        for (i, (_, r)) in self.ranges.iter().enumerate() {
            idx.extend(std::iter::repeat_n(i, r.len()));
        }
        idx
    }
}

/// Extractor hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsfConfig {
    pub n_filters: usize,
    pub kernel_len: usize,
    pub max_frame: usize,
    pub quantile_levels: Vec<f64>,
    pub autocorr_lags: Vec<usize>,
    pub tau_stat: f64,
    pub tau_cross: f64,
    pub tau_quant: f64,
    pub eps: f64,
    /// Initial Gaussian window width in samples.
    pub sigma_w: f64,
    pub sampling_rate: f64,
}

impl Default for TsfConfig {
    fn default() -> Self {
        Self {
            n_filters: 8,
            kernel_len: 31,
            max_frame: 32,
            quantile_levels: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            autocorr_lags: vec![1, 2, 3, 4, 5],
            tau_stat: 0.1,
            tau_cross: 0.1,
            tau_quant: 0.1,
            eps: 1e-8,
            sigma_w: 8.0,
            sampling_rate: 1.0,
        }
    }
}

impl TsfConfig {
    pub fn frame_len(&self, m: usize) -> usize {
        self.max_frame.min(m)
    }

    pub fn layout(&self, m: usize) -> Result<FamilyLayout> {
        FamilyLayout::from_widths(&[
            (Family::Filterbank, self.n_filters),
            (Family::Spectral, self.frame_len(m) / 2 + 1 + 4),
            (Family::Statistics, 5),
            (Family::Shape, 2),
            (Family::Crossing, 5),
            (Family::Quantiles, self.quantile_levels.len()),
            (Family::Autocorr, self.autocorr_lags.len()),
        ])
    }

    /// Checks the block length against every family's precondition.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.n_filters == 0 || self.kernel_len.is_multiple_of(2) {
            return Err(Error::Config("filterbank needs >= 1 filter and an odd kernel".into()));
        }
        if m < self.kernel_len {
            return Err(Error::Invalid(format!(
                "block length {m} is shorter than the filter kernel ({})",
                self.kernel_len
            )));
        }
        if [self.tau_stat, self.tau_cross, self.tau_quant, self.eps, self.sigma_w]
            .iter()
            .any(|v| !(*v > 0.0))
        {
            return Err(Error::Config(
                "temperatures, epsilon and window width must be positive".into(),
            ));
        }
        if self.quantile_levels.is_empty() || self.quantile_levels.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Config("quantile levels must lie in (0, 1)".into()));
        }
        if self.autocorr_lags.is_empty() || self.autocorr_lags.contains(&0) {
            return Err(Error::Config("autocorrelation lags must be positive".into()));
        }
        if let Some(&lag) = self.autocorr_lags.iter().find(|&&k| k >= m) {
            return Err(Error::Invalid(format!(
                "autocorrelation lag {lag} must be below block length {m}"
            )));
        }
        Ok(())
    }
}

/// Learnable extractor parameters in unconstrained form.
///
/// Band edges are `f_high = 0.5·σ(u_high)` and `f_low = f_high·σ(u_low)`,
/// so `0 < f_low < f_high ≤ 0.5` for any real `u`.
#[derive(Clone, Debug, PartialEq)]
pub struct TsfParams {
    pub u_low: Tensor,
    pub u_high: Tensor,
    /// Natural log of the Gaussian window width in samples, shape `[1]`.
    pub log_sigma: Tensor,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl TsfParams {
    /// Bands between consecutive log-spaced edges over (0.01, 0.5).
    pub fn init(cfg: &TsfConfig) -> Self {
        let f = cfg.n_filters;
        let edge = |i: usize| 0.01 * (0.5f64 / 0.01).powf(i as f64 / f as f64);
        // the top edge sits just under Nyquist so the logit stays finite
        let (mut lo, mut hi) = (Vec::with_capacity(f), Vec::with_capacity(f));
        for i in 0..f {
            let (fl, fh) = (edge(i), edge(i + 1).min(0.499));
            hi.push(logit(fh / 0.5));
            lo.push(logit(fl / fh));
        }
        Self {
            u_low: Tensor::vector(lo),
            u_high: Tensor::vector(hi),
            log_sigma: Tensor::vector(vec![cfg.sigma_w.ln()]),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> TsfVars {
        TsfVars {
            u_low: g.leaf(self.u_low.clone(), trainable),
            u_high: g.leaf(self.u_high.clone(), trainable),
            log_sigma: g.leaf(self.log_sigma.clone(), trainable),
        }
    }
}

/// Graph handles for [`TsfParams`].
#[derive(Clone, Copy, Debug)]
pub struct TsfVars {
    pub u_low: Var,
    pub u_high: Var,
    pub log_sigma: Var,
}

/// `B×N×m×C` blocks to `[B·N·C, m]` rows.
pub fn blocks_to_rows(g: &mut Graph, blocks: Var) -> Result<Var> {
    let s = g.shape(blocks).to_vec();
    if s.len() != 4 {
        return Err(Error::Invalid(format!("blocks must be B×N×m×C, got {s:?}")));
    }
    let p = g.permute(blocks, &[0, 1, 3, 2])?;
    g.reshape(p, &[s[0] * s[1] * s[3], s[2]])
}

/// Runs one family on `[R, m]` rows, returning `[R, width]`.
pub fn family_rows(
    g: &mut Graph,
    rows: Var,
    family: Family,
    vars: &TsfVars,
    cfg: &TsfConfig,
    mode: Mode,
) -> Result<Var> {
    match family {
        Family::Filterbank => filterbank_rows(g, rows, vars, cfg),
        Family::Spectral => spectral_rows(g, rows, vars, cfg),
        Family::Statistics => statistics_rows(g, rows, cfg, mode),
        Family::Shape => shape_rows(g, rows, cfg),
        Family::Crossing => crossings_rows(g, rows, cfg, mode),
        Family::Quantiles => match mode {
            Mode::Soft => g.soft_quantile(rows, &cfg.quantile_levels, cfg.tau_quant),
            Mode::Hard => g.hard_quantile(rows, &cfg.quantile_levels),
        },
        Family::Autocorr => autocorr_rows(g, rows, &cfg.autocorr_lags, cfg.eps),
    }
}

/// Runs one family on `B×N×m×C` blocks, returning `B×N×C×width`.
pub fn extract_family(
    g: &mut Graph,
    blocks: Var,
    family: Family,
    vars: &TsfVars,
    cfg: &TsfConfig,
    mode: Mode,
) -> Result<Var> {
    let s = g.shape(blocks).to_vec();
    let rows = blocks_to_rows(g, blocks)?;
    cfg.validate(s[2])?;
    let f = family_rows(g, rows, family, vars, cfg, mode)?;
    let w = g.shape(f)[1];
    g.reshape(f, &[s[0], s[1], s[3], w])
}

/// All seven families concatenated in layout order: `B×N×C×D`.
pub fn extract_all(g: &mut Graph, blocks: Var, vars: &TsfVars, cfg: &TsfConfig, mode: Mode) -> Result<Var> {
    let s = g.shape(blocks).to_vec();
    let rows = blocks_to_rows(g, blocks)?;
    cfg.validate(s[2])?;
    let mut parts = Vec::with_capacity(Family::ALL.len());
    for fam in Family::ALL {
        parts.push(family_rows(g, rows, fam, vars, cfg, mode)?);
    }
    let all = g.concat(&parts, 1)?;
    let d = g.shape(all)[1];
    g.reshape(all, &[s[0], s[1], s[3], d])
}

/// Plain-tensor evaluation of [`extract_all`] without gradients.
pub fn extract_tensor(blocks: &Tensor, params: &TsfParams, cfg: &TsfConfig, mode: Mode) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let b = g.constant(blocks.clone());
    let z = extract_all(&mut g, b, &vars, cfg, mode)?;
    Ok(g.value(z).clone())
}

/// Anchors of plain rows `[R, m]` → `[R, D]`.
pub fn extract_rows_tensor(rows: &Tensor, params: &TsfParams, cfg: &TsfConfig, mode: Mode) -> Result<Tensor> {
    let s = rows.shape();
    if s.len() != 2 {
        return Err(Error::Invalid(format!("rows must be [R, m], got {s:?}")));
    }
    let blocks = rows.reshape(&[s[0], 1, s[1], 1])?;
    let z = extract_tensor(&blocks, params, cfg, mode)?;
    let d = z.shape()[3];
    z.reshape(&[s[0], d])
}
