//! Self-supervised pretraining of the compact encoder with three binary
//! pretext tasks: arrow of time, chunk permutation and time warping.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{Adam, AdamConfig};
use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::compact::{CompactTcNet, HEAD_PREFIX};
use crate::nn::{seeded, Binding, Linear, Rng64};
use crate::tensor::{Graph, Tensor, Var};
use crate::tsf::Mode;

pub const PERMUTE_CHUNKS: usize = 4;
pub const MIN_CHUNK: usize = 10;
pub const WARP_SEGMENTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SslKind {
    Aot,
    Permute,
    Warp,
}

impl SslKind {
    pub const ALL: [SslKind; 3] = [SslKind::Aot, SslKind::Permute, SslKind::Warp];

    pub fn name(self) -> &'static str {
        match self {
            SslKind::Aot => "aot",
            SslKind::Permute => "permute",
            SslKind::Warp => "warp",
        }
    }
}

fn check_window(window: &[f64], channels: usize) -> Result<usize> {
    if channels == 0 || window.is_empty() || !window.len().is_multiple_of(channels) {
        return Err(Error::Invalid(format!(
            "window of {} values does not split into {channels} channels",
            window.len()
        )));
    }
    Ok(window.len() / channels)
}

/// Reverses every channel in time.
pub fn reverse_time(window: &[f64], channels: usize) -> Result<Vec<f64>> {
    let l = check_window(window, channels)?;
    Ok(window.chunks(l).flat_map(|ch| ch.iter().rev().copied()).collect())
}

/// Reorders four equal chunks by `order`; a tail shorter than a chunk stays in place.
pub fn permute_chunks(window: &[f64], channels: usize, order: &[usize; PERMUTE_CHUNKS]) -> Result<Vec<f64>> {
    let l = check_window(window, channels)?;
    if l < PERMUTE_CHUNKS * MIN_CHUNK {
        return Err(Error::Invalid(format!(
            "permutation needs length >= {}, got {l}",
            PERMUTE_CHUNKS * MIN_CHUNK
        )));
    }
    let mut sorted = *order;
    sorted.sort_unstable();
    if sorted != [0, 1, 2, 3] {
        return Err(Error::Invalid(format!("{order:?} is not a permutation of 4 chunks")));
    }
    let chunk = l / PERMUTE_CHUNKS;
    let mut out = Vec::with_capacity(window.len());
    for ch in window.chunks(l) {
        for &o in order {
            out.extend_from_slice(&ch[o * chunk..(o + 1) * chunk]);
        }
        out.extend_from_slice(&ch[PERMUTE_CHUNKS * chunk..]);
    }
    Ok(out)
}

/// Piecewise-linear time warp: input segment `i` of four equal segments
/// occupies output duration proportional to `1/speeds[i]`, renormalised to
/// the window; the result is resampled back to `L` by linear interpolation.
pub fn time_warp(window: &[f64], channels: usize, speeds: &[f64; WARP_SEGMENTS]) -> Result<Vec<f64>> {
    let l = check_window(window, channels)?;
    if speeds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::Invalid("warp speeds must be positive".into()));
    }
    if l < 2 {
        return Ok(window.to_vec());
    }
    let span = (l - 1) as f64;
    let total: f64 = speeds.iter().map(|s| 1.0 / s).sum();
    let mut out_knots = [0.0; WARP_SEGMENTS + 1];
    for i in 0..WARP_SEGMENTS {
        out_knots[i + 1] = out_knots[i] + span * (1.0 / speeds[i]) / total;
    }
    out_knots[WARP_SEGMENTS] = span;
    let in_seg = span / WARP_SEGMENTS as f64;
    let source: Vec<f64> = (0..l)
        .map(|j| {
            let t = j as f64;
            let i = (0..WARP_SEGMENTS)
                .find(|&i| t <= out_knots[i + 1])
                .unwrap_or(WARP_SEGMENTS - 1);
            let frac = (t - out_knots[i]) / (out_knots[i + 1] - out_knots[i]);
            (in_seg * (i as f64 + frac)).clamp(0.0, span)
        })
        .collect();
    let mut out = Vec::with_capacity(window.len());
    for ch in window.chunks(l) {
        for &s in &source {
            let i0 = (s.floor() as usize).min(l - 1);
            let i1 = (i0 + 1).min(l - 1);
            let w = s - i0 as f64;
            out.push(ch[i0] * (1.0 - w) + ch[i1] * w);
        }
    }
    Ok(out)
}

/// Applies `kind` unconditionally with randomly drawn parameters.
pub fn apply_transform(window: &[f64], channels: usize, kind: SslKind, rng: &mut Rng64) -> Result<Vec<f64>> {
    match kind {
        SslKind::Aot => reverse_time(window, channels),
        SslKind::Permute => {
            let mut order = [0, 1, 2, 3];
            order.shuffle(rng);
            permute_chunks(window, channels, &order)
        }
        SslKind::Warp => {
            let speeds: [f64; WARP_SEGMENTS] = std::array::from_fn(|_| 2f64.powf(rng.random_range(-1.0..=1.0)));
            time_warp(window, channels, &speeds)
        }
    }
}

/// With probability 0.5 applies `kind` (label 1), otherwise returns the window unchanged (label 0).
/// An identity draw of the permutation keeps label 1.
pub fn ssl_transform(window: &[f64], channels: usize, kind: SslKind, rng: &mut Rng64) -> Result<(Vec<f64>, u8)> {
    if kind == SslKind::Permute {
        let l = check_window(window, channels)?;
        if l < PERMUTE_CHUNKS * MIN_CHUNK {
            return Err(Error::Invalid(format!("permutation needs length >= 40, got {l}")));
        }
    }
    if rng.random_bool(0.5) {
        Ok((apply_transform(window, channels, kind, rng)?, 1))
    } else {
        Ok((window.to_vec(), 0))
    }
}

/// Independently samples each of the three tasks on one window, applied in
/// the order aot, permute, warp; returns the window and the three labels.
pub fn ssl_sample(window: &[f64], channels: usize, rng: &mut Rng64) -> Result<(Vec<f64>, [u8; 3])> {
    let mut w = window.to_vec();
    let mut labels = [0u8; 3];
    for (i, kind) in SslKind::ALL.into_iter().enumerate() {
        let (next, y) = ssl_transform(&w, channels, kind, rng)?;
        w = next;
        labels[i] = y;
    }
    Ok((w, labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub delta_weight: f64,
    pub seed: u64,
}

impl Default for SslConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 256,
            lr: 1e-3,
            weight_decay: 1e-4,
            delta_weight: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SslEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub bce: [f64; 3],
}

/// The three pretext heads, registered in the encoder's store under `ssl.`.
#[derive(Clone, Debug)]
pub struct SslHeads {
    pub heads: [Linear; 3],
}

impl SslHeads {
    /// Registers the heads, or finds them when they already exist.
    pub fn attach(model: &mut CompactTcNet, seed: u64) -> Self {
        let d = model.config.output_width();
        let mut rng = seeded(seed ^ 0x55_5e_ed);
        let heads = SslKind::ALL.map(|k| {
            let name = format!("{HEAD_PREFIX}{}", k.name());
            match (
                model.store.find(&format!("{name}.w")),
                model.store.find(&format!("{name}.b")),
            ) {
                (Some(w), Some(b)) => Linear {
                    w,
                    b,
                    d_in: d,
                    d_out: 1,
                },
                _ => Linear::new(&mut model.store, &name, d, 1, &mut rng),
            }
        });
        Self { heads }
    }

    /// Head logits, each `B×1`.
    pub fn logits(&self, g: &mut Graph, p: &Binding, rep: Var) -> Result<[Var; 3]> {
        let a = self.heads[0].forward(g, p, rep)?;
        let b = self.heads[1].forward(g, p, rep)?;
        let c = self.heads[2].forward(g, p, rep)?;
        Ok([a, b, c])
    }
}

/// Mean binary cross-entropy of `B×1` logits, as `log(1 + e^z) − y·z`.
pub fn bce_with_logits(g: &mut Graph, logits: Var, labels: &[u8]) -> Result<Var> {
    let b = labels.len();
    let zeros = g.constant(Tensor::zeros(&[b, 1]));
    let pair = g.concat(&[zeros, logits], 1)?;
    let softplus = g.logsumexp(pair, 1, false)?;
    let y = g.constant(Tensor::vector(labels.iter().map(|&v| f64::from(v)).collect()));
    let z = g.reshape(logits, &[b])?;
    let yz = g.mul(y, z)?;
    let per = g.sub(softplus, yz)?;
    g.mean(per, 0, false)
}

fn sampled_batch(data: &WindowedDataset, idx: &[usize], rng: &mut Rng64) -> Result<(Tensor, [Vec<u8>; 3])> {
    let mut values = Vec::with_capacity(idx.len() * data.window_size());
    let mut labels: [Vec<u8>; 3] = Default::default();
    for &i in idx {
        let w: Vec<f64> = data.window(i).iter().map(|&v| f64::from(v)).collect();
        let (w, y) = ssl_sample(&w, data.channels, rng)?;
        values.extend(w);
        for t in 0..3 {
            labels[t].push(y[t]);
        }
    }
    Ok((
        Tensor::new(vec![idx.len(), data.channels, data.length], values)?,
        labels,
    ))
}

/// Trains encoder and heads jointly on the mean of the three BCE losses
/// plus the weighted anchor-deviation regulariser.
pub fn ssl_pretrain(
    model: &mut CompactTcNet,
    data: &WindowedDataset,
    cfg: &SslConfig,
) -> Result<(SslHeads, Vec<SslEpoch>)> {
    if data.is_empty() {
        return Err(Error::Invalid("no windows to pretrain on".into()));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("ssl epochs, batch size and lr must be positive".into()));
    }
    let heads = SslHeads::attach(model, cfg.seed);
    let mut opt = Adam::new(
        &model.store,
        AdamConfig {
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
    );
    let mut rng = seeded(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut bce_sum = [0.0; 3];
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (x, labels) = sampled_batch(data, chunk, &mut rng)?;
            let mut g = Graph::new();
            let p = model.store.bind(&mut g, true);
            let xv = g.constant(x);
            let out = model.forward(&mut g, &p, xv, Mode::Soft)?;
            let logits = heads.logits(&mut g, &p, out.rep)?;
            let mut terms = Vec::with_capacity(3);
            for t in 0..3 {
                terms.push(bce_with_logits(&mut g, logits[t], &labels[t])?);
            }
            let s01 = g.add(terms[0], terms[1])?;
            let s = g.add(s01, terms[2])?;
            let mean = g.scale(s, 1.0 / 3.0);
            let (l_delta, _) = crate::correction::correction_regularizers(&mut g, &out.bundle)?;
            let reg = g.scale(l_delta, cfg.delta_weight);
            let loss = g.add(mean, reg)?;
            let lv = g.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::NonFinite(format!(
                    "pretraining loss at epoch {epoch}, batch {bi}"
                )));
            }
            let w = chunk.len() as f64;
            loss_sum += lv * w;
            for t in 0..3 {
                bce_sum[t] += g.value(terms[t]).item() * w;
            }
            let grads = g.backward(loss)?;
            opt.step(&mut model.store, &p.gradients(&grads), cfg.lr)?;
        }
        let n = data.len() as f64;
        history.push(SslEpoch {
            epoch,
            loss: loss_sum / n,
            bce: bce_sum.map(|v| v / n),
        });
        log::info!("ssl epoch {epoch} loss {:.4}", loss_sum / n);
    }
    Ok((heads, history))
}

/// Accuracy of each head on freshly sampled pretext labels.
pub fn ssl_head_accuracy(
    model: &CompactTcNet,
    heads: &SslHeads,
    data: &WindowedDataset,
    seed: u64,
) -> Result<[f64; 3]> {
    let mut rng = seeded(seed);
    let mut correct = [0usize; 3];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let (x, labels) = sampled_batch(data, chunk, &mut rng)?;
        let mut g = Graph::new();
        let p = model.store.bind(&mut g, false);
        let xv = g.constant(x);
        let out = model.forward(&mut g, &p, xv, Mode::Soft)?;
        let logits = heads.logits(&mut g, &p, out.rep)?;
        for t in 0..3 {
            for (z, &y) in g.value(logits[t]).data().iter().zip(&labels[t]) {
                correct[t] += usize::from((*z > 0.0) == (y == 1));
            }
        }
    }
    Ok(correct.map(|c| c as f64 / data.len() as f64))
}

/// Frozen representations of every tri-axial group, concatenated per window:
/// `count × (C/3)·256`, row-major.
pub fn freeze_embed(model: &CompactTcNet, data: &WindowedDataset, batch_size: usize) -> Result<Tensor> {
    let c = data.channels;
    if !c.is_multiple_of(3) {
        return Err(Error::Invalid(format!(
            "{c} channels do not split into tri-axial groups"
        )));
    }
    if data.is_empty() {
        return Err(Error::Invalid("no windows to embed".into()));
    }
    let groups = c / 3;
    let l = data.length;
    let d = model.config.output_width();
    let width = groups * d;
    let mut out = vec![0.0; data.len() * width];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        for gi in 0..groups {
            let mut values = Vec::with_capacity(chunk.len() * 3 * l);
            for &i in chunk {
                values.extend(
                    data.window(i)[gi * 3 * l..(gi + 1) * 3 * l]
                        .iter()
                        .map(|&v| f64::from(v)),
                );
            }
            let rep = model.embed(&Tensor::new(vec![chunk.len(), 3, l], values)?, Mode::Soft)?;
            for (r, &i) in chunk.iter().enumerate() {
                out[i * width + gi * d..i * width + (gi + 1) * d].copy_from_slice(&rep.data()[r * d..(r + 1) * d]);
            }
        }
    }
    Tensor::new(vec![data.len(), width], out)
}
