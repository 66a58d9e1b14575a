//! Seeded synthetic multi-class windows.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::WindowedDataset;
use crate::error::{Error, Result};
use crate::nn::{seeded, Rng64};

pub const N_SUBJECTS: i32 = 10;
pub const NOISE_STD: f64 = 0.1;

/// Rising ramp with an instantaneous drop, in [-1, 1).
fn sawtooth(phase: f64) -> f64 {
    2.0 * (phase - phase.floor()) - 1.0
}

/// One window of class `k`, channel-major `C×L`.
pub fn synth_window(k: usize, channels: usize, length: usize, fs: f64, rng: &mut Rng64) -> Vec<f64> {
    let noise = Normal::new(0.0, NOISE_STD).unwrap();
    let f_sin = (k as f64 + 1.0) * fs / length as f64 * 2.0;
    let f_saw = (k as f64 + 1.0) * fs / length as f64;
    let amp = 1.0 + 0.5 * k as f64;
    let saw_phase: f64 = rng.random();
    let mut out = Vec::with_capacity(channels * length);
    for _ in 0..channels {
        let phase = rng.random_range(0.0..2.0 * PI);
        for t in 0..length {
            let time = t as f64 / fs;
            let v = amp * (2.0 * PI * f_sin * time + phase).sin()
                + 0.5 * amp * sawtooth(f_saw * time + saw_phase)
                + noise.sample(rng);
            out.push(v);
        }
    }
    out
}

/// Class `k` mixes a sinusoid at `(k+1)·2·fs/L` Hz with amplitude `1 + 0.5k`,
/// an asymmetric sawtooth at half that frequency, and N(0, 0.1²) noise.
/// Windows are interleaved by class; subjects cycle over ten ids.
pub fn synth_generate(
    n_classes: usize,
    per_class: usize,
    channels: usize,
    length: usize,
    fs: f64,
    seed: u64,
) -> Result<WindowedDataset> {
    if n_classes < 2 {
        return Err(Error::Invalid("synthetic data needs at least 2 classes".into()));
    }
    if per_class == 0 || channels == 0 || length < 2 || !(fs > 0.0) {
        return Err(Error::Invalid(
            "per_class, channels must be positive, length >= 2, fs > 0".into(),
        ));
    }
    let mut rng = seeded(seed);
    let total = n_classes * per_class;
    let mut windows = Vec::with_capacity(total * channels * length);
    let mut labels = Vec::with_capacity(total);
    let mut subjects = Vec::with_capacity(total);
    for i in 0..total {
        let k = i % n_classes;
        windows.extend(
            synth_window(k, channels, length, fs, &mut rng)
                .into_iter()
                .map(|v| v as f32),
        );
        labels.push(k as i32);
        subjects.push((i / n_classes) as i32 % N_SUBJECTS);
    }
    Ok(WindowedDataset {
        channels,
        length,
        n_classes,
        sampling_rate: fs,
        windows,
        labels,
        subjects,
        channel_names: (0..channels).map(|c| format!("ch{c}")).collect(),
        class_names: (0..n_classes).map(|k| format!("class{k}")).collect(),
    })
}

/// Unit-variance Gaussian noise windows with label 0 and round-robin subjects.
pub fn noise_generate(count: usize, channels: usize, length: usize, seed: u64) -> WindowedDataset {
    let mut rng = seeded(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let windows = (0..count * channels * length)
        .map(|_| normal.sample(&mut rng) as f32)
        .collect();
    WindowedDataset {
        channels,
        length,
        n_classes: 1,
        sampling_rate: 1.0,
        windows,
        labels: vec![0; count],
        subjects: (0..count).map(|i| i as i32 % N_SUBJECTS).collect(),
        channel_names: (0..channels).map(|c| format!("ch{c}")).collect(),
        class_names: vec!["noise".into()],
    }
}
