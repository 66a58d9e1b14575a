//! Relative change of each anchor family under noise, rotation and circular shift.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::model::unfold_blocks;
use crate::nn::{seeded, Rng64};
use crate::tensor::{Graph, Tensor};
use crate::tsf::{extract_all, Family, Mode, TsfConfig, TsfParams};

pub const REL_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    GaussianNoise,
    Rotation,
    TemporalShift,
}

impl PerturbationKind {
    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::GaussianNoise => "gaussian-noise",
            PerturbationKind::Rotation => "rotation",
            PerturbationKind::TemporalShift => "temporal-shift",
        }
    }
}

impl std::str::FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-noise" | "noise" => Ok(Self::GaussianNoise),
            "rotation" => Ok(Self::Rotation),
            "temporal-shift" | "shift" => Ok(Self::TemporalShift),
            _ => Err(Error::Config(format!("unknown perturbation `{s}`"))),
        }
    }
}

/// Magnitude is σ in signal-std units, degrees, or a fraction of the window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub magnitude: f64,
}

impl PerturbationSpec {
    pub fn validate(&self, channels: usize) -> Result<()> {
        let m = self.magnitude;
        let ok = match self.kind {
            PerturbationKind::GaussianNoise => m >= 0.0 && m.is_finite(),
            PerturbationKind::Rotation => (0.0..360.0).contains(&m),
            PerturbationKind::TemporalShift => (0.0..1.0).contains(&m),
        };
        if !ok {
            return Err(Error::Config(format!(
                "{} magnitude {m} out of range",
                self.kind.name()
            )));
        }
        if self.kind == PerturbationKind::Rotation && !channels.is_multiple_of(3) {
            return Err(Error::Invalid(format!(
                "rotation needs tri-axial groups, got {channels} channels"
            )));
        }
        Ok(())
    }
}

/// Rodrigues rotation matrix about a unit `axis`.
pub fn rotation_matrix(axis: [f64; 3], degrees: f64) -> [[f64; 3]; 3] {
    let [x, y, z] = axis;
    let t = degrees.to_radians();
    let (s, c) = t.sin_cos();
    let k = 1.0 - c;
    [
        [c + x * x * k, x * y * k - z * s, x * z * k + y * s],
        [y * x * k + z * s, c + y * y * k, y * z * k - x * s],
        [z * x * k - y * s, z * y * k + x * s, c + z * z * k],
    ]
}

/// Rotates every consecutive channel triple of a `C×L` window.
pub fn rotate_groups(window: &[f64], channels: usize, rot: &[[f64; 3]; 3]) -> Vec<f64> {
    let l = window.len() / channels;
    let mut out = window.to_vec();
    for g in 0..channels / 3 {
        let base = g * 3 * l;
        for t in 0..l {
            let v = [window[base + t], window[base + l + t], window[base + 2 * l + t]];
            for (r, row) in rot.iter().enumerate() {
                out[base + r * l + t] = row[0] * v[0] + row[1] * v[1] + row[2] * v[2];
            }
        }
    }
    out
}

/// Circularly rolls each channel right by `k` samples.
pub fn circular_shift(window: &[f64], channels: usize, k: usize) -> Vec<f64> {
    let l = window.len() / channels;
    let mut out = Vec::with_capacity(window.len());
    for ch in window.chunks(l) {
        out.extend((0..l).map(|t| ch[(t + l - k % l) % l]));
    }
    out
}

fn random_axis(rng: &mut Rng64) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|c| c / n);
        }
    }
}

/// Applies the perturbation; a zero magnitude returns an exact copy.
pub fn perturb(window: &[f64], channels: usize, spec: &PerturbationSpec, rng: &mut Rng64) -> Vec<f64> {
    let l = window.len() / channels;
    match spec.kind {
        _ if spec.magnitude == 0.0 => window.to_vec(),
        PerturbationKind::GaussianNoise => {
            let mut out = Vec::with_capacity(window.len());
            for ch in window.chunks(l) {
                let mu = ch.iter().sum::<f64>() / l as f64;
                let var = ch.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / l as f64;
                let sd = spec.magnitude * var.sqrt();
                out.extend(ch.iter().map(|&v| {
                    v + {
                        let z: f64 = StandardNormal.sample(rng);
                        sd * z
                    }
                }));
            }
            out
        }
        PerturbationKind::Rotation => {
            let axis = random_axis(rng);
            rotate_groups(window, channels, &rotation_matrix(axis, spec.magnitude))
        }
        PerturbationKind::TemporalShift => {
            circular_shift(window, channels, (spec.magnitude * l as f64).floor() as usize)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub kind: PerturbationKind,
    pub magnitude: f64,
    /// Mean relative change per family, in family order.
    pub changes: Vec<f64>,
}

/// Hard anchors `B×N×C×D` of non-overlapping blocks.
fn anchors(x: Tensor, block: usize, params: &TsfParams, cfg: &TsfConfig) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let xv = g.constant(x);
    let blocks = unfold_blocks(&mut g, xv, block, block)?;
    let z = extract_all(&mut g, blocks, &vars, cfg, Mode::Hard)?;
    Ok(g.value(z).clone())
}

/// Per family, mean over windows, blocks, channels and features of
/// `|f(x') − f(x)| / (|f(x)| + ε)`.
pub fn sensitivity_scan(
    data: &WindowedDataset,
    specs: &[PerturbationSpec],
    block: usize,
    params: &TsfParams,
    cfg: &TsfConfig,
    seed: u64,
) -> Result<Vec<SensitivityRow>> {
    if data.is_empty() {
        return Err(Error::Invalid("no windows to perturb".into()));
    }
    for s in specs {
        s.validate(data.channels)?;
    }
    let layout = cfg.layout(block)?;
    let fam_of = layout.column_family_index();
    let d = layout.width();
    let idx: Vec<usize> = (0..data.len()).collect();
    let base = anchors(data.batch(&idx), block, params, cfg)?;
    let mut rows = Vec::with_capacity(specs.len());
    for (si, spec) in specs.iter().enumerate() {
        let mut rng = seeded(seed.wrapping_add(si as u64));
        let mut values = Vec::with_capacity(data.len() * data.window_size());
        for i in 0..data.len() {
            let w: Vec<f64> = data.window(i).iter().map(|&v| f64::from(v)).collect();
            values.extend(perturb(&w, data.channels, spec, &mut rng));
        }
        let x = Tensor::new(vec![data.len(), data.channels, data.length], values)?;
        let pert = anchors(x, block, params, cfg)?;
        let mut sums = vec![0.0; layout.len()];
        let mut counts = vec![0usize; layout.len()];
        for (j, (a, b)) in base.data().iter().zip(pert.data()).enumerate() {
            let f = fam_of[j % d];
            sums[f] += (b - a).abs() / (a.abs() + REL_EPS);
            counts[f] += 1;
        }
        rows.push(SensitivityRow {
            kind: spec.kind,
            magnitude: spec.magnitude,
            changes: sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect(),
        });
    }
    Ok(rows)
}

/// Family names in the order used by [`SensitivityRow::changes`].
pub fn family_names() -> Vec<&'static str> {
    Family::ALL.iter().map(|f| f.name()).collect()
}

/// Pure sinusoid windows with an integer number of periods, for shift checks.
pub fn periodic_windows(
    count: usize,
    channels: usize,
    length: usize,
    period: usize,
    rng: &mut Rng64,
) -> WindowedDataset {
    let mut windows = Vec::with_capacity(count * channels * length);
    for _ in 0..count {
        for _ in 0..channels {
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.5..2.0);
            windows.extend((0..length).map(|t| (amp * (2.0 * PI * t as f64 / period as f64 + phase).sin()) as f32));
        }
    }
    WindowedDataset {
        channels,
        length,
        n_classes: 1,
        sampling_rate: 1.0,
        windows,
        labels: vec![0; count],
        subjects: vec![0; count],
        channel_names: (0..channels).map(|c| format!("ch{c}")).collect(),
        class_names: vec!["periodic".into()],
    }
}
